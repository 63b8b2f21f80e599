#include "mtvnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mtvnet/instrumentation.hpp"
#include "mtvnet/io_util.hpp"

namespace mtvnet {

namespace {

torch::Tensor centre_crop(const torch::Tensor& x, std::int64_t extent) {
  const auto e = x.size(-1);
  const auto off = (e - extent) / 2;
  return x.narrow(-3, off, extent).narrow(-2, off, extent).narrow(-1, off, extent);
}

std::vector<torch::Tensor> nested_from_outer(const torch::Tensor& outer, const std::vector<int>& extents) {
  std::vector<torch::Tensor> ctx;
  for (int e : extents) ctx.push_back(centre_crop(outer, e).unsqueeze(0));
  return ctx;
}

torch::Tensor box_sum(const torch::Tensor& out, const Box& box) {
  return out.narrow(2, box.origin[0], box.extent[0])
      .narrow(3, box.origin[1], box.extent[1])
      .narrow(4, box.origin[2], box.extent[2])
      .sum();
}

}  // namespace

LamMap lam_3d(const ContextModel& model, const torch::Tensor& outer, const std::vector<int>& extents, int scale,
              const Box& box, const LamOptions& opts) {
  if (!model) throw std::invalid_argument("lam_3d: no differentiable model");
  if (opts.steps < 8) throw std::invalid_argument("lam_3d: at least 8 path steps are required");
  if (outer.dim() != 4 || extents.empty() || extents.front() != outer.size(-1)) {
    throw std::invalid_argument("lam_3d: outer context must be [C, E, E, E] with E = extents.front()");
  }
  const std::int64_t out_edge = static_cast<std::int64_t>(scale) * extents.back();
  for (int a = 0; a < 3; ++a) {
    if (box.extent[a] < 1 || box.origin[a] < 0 || box.origin[a] + box.extent[a] > out_edge) {
      throw std::invalid_argument("lam_3d: prediction box outside the SR output");
    }
  }
  auto input = outer.detach().to(torch::kFloat64);
  auto baseline = gaussian_blur3d(input, opts.baseline_sigma);
  auto diff = input - baseline;

  auto evaluate = [&](const torch::Tensor& x) {
    torch::NoGradGuard guard;
    return box_sum(model(nested_from_outer(x, extents)), box).item<double>();
  };

  auto grad_sum = torch::zeros_like(input);
  for (int k = 1; k <= opts.steps; ++k) {
    const double alpha = static_cast<double>(k) / opts.steps;
    auto point = (baseline + alpha * diff).detach().requires_grad_(true);
    auto f = box_sum(model(nested_from_outer(point, extents)), box);
    if (!f.requires_grad()) throw std::invalid_argument("lam_3d: model output does not depend on its input");
    auto g = torch::autograd::grad({f}, {point}, {}, false, false, true)[0];
    if (g.defined()) grad_sum += g;
  }

  LamMap map;
  map.box = box;
  map.signed_attribution = (diff * grad_sum / opts.steps).sum(0);
  map.attribution = map.signed_attribution.abs();
  map.f_input = evaluate(input);
  map.f_baseline = evaluate(baseline);
  map.di = diffusion_index(map.attribution);

  const std::int64_t off = (extents.front() - extents.back()) / 2;
  const std::int64_t z0 = off + box.origin[2] / scale;
  const std::int64_t z1 = off + (box.origin[2] + box.extent[2] + scale - 1) / scale;
  map.slice_average = map.attribution.narrow(2, z0, z1 - z0).mean(2);
  return map;
}

double diffusion_index(const torch::Tensor& attribution) {
  auto v = attribution.detach().to(torch::kFloat64).reshape({-1});
  if (v.numel() == 0) return 0.0;
  if ((v < 0).any().item<bool>()) throw std::invalid_argument("diffusion_index: attribution must be non-negative");
  const double total = v.sum().item<double>();
  if (total == 0.0) return 0.0;
  auto sorted = std::get<0>(v.sort());
  const auto n = static_cast<double>(v.numel());
  auto rank = torch::arange(1, v.numel() + 1, torch::kFloat64);
  const double gini = 2.0 * (rank * sorted).sum().item<double>() / (n * total) - (n + 1.0) / n;
  return 100.0 * (1.0 - gini);
}

ContextModel as_context_model(Mtvnet& net) {
  return [net](const std::vector<torch::Tensor>& contexts) mutable {
    const auto dtype = net->parameters().front().scalar_type();
    std::vector<torch::Tensor> in;
    for (const auto& c : contexts) in.push_back(c.to(dtype));
    return net->forward(in);
  };
}

// ------------------------------------------------------ model accounting

namespace {

std::int64_t linear(std::int64_t in, std::int64_t out) { return in * out + out; }
std::int64_t conv(std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k * k + out; }

struct Sizes {
  std::int64_t c, skip, hidden, heads, cin;
};

Sizes sizes_of(const ModelConfig& cfg) {
  return {cfg.emb_channels, cfg.skip_channels, std::lround(cfg.emb_channels * cfg.mlp_ratio), cfg.heads,
          cfg.in_channels};
}

std::int64_t mha(const ModelConfig& cfg) {
  return 4 * linear(cfg.emb_channels, cfg.emb_channels) + (cfg.attention_score == AttentionScore::kCosine ? cfg.heads : 0);
}

std::int64_t mlp(std::int64_t in, std::int64_t hidden, std::int64_t out) { return linear(in, hidden) + linear(hidden, out); }

std::int64_t svhat_params(const ModelConfig& cfg, bool cross) {
  const auto s = sizes_of(cfg);
  const std::int64_t ln = 2 * s.c;
  const std::int64_t span = 2 * cfg.window - 1;
  std::int64_t n = mha(cfg) + span * span * span * s.heads + 2 * ln + mlp(s.c, s.hidden, s.c);
  if (cfg.features.use_cat) n += 2 * ln + mha(cfg) + mlp(s.c, s.hidden, s.c) + 2 * s.c;
  if (cross) {
    const std::int64_t one = mlp(s.c, s.c, s.c) + mha(cfg) + ln;
    n += cfg.features.use_cat ? 2 * one : one;
  }
  return n;
}

}  // namespace

std::int64_t analytic_parameter_count(const ModelConfig& cfg) {
  validate(cfg);
  const auto s = sizes_of(cfg);
  const int streams = cfg.features.use_cat ? 2 : 1;
  const int total = static_cast<int>(cfg.levels.size());
  const int active = cfg.active_levels();
  std::int64_t n = 0;
  for (int k = total - active; k < total; ++k) {
    const auto& lv = cfg.levels[static_cast<std::size_t>(k)];
    const bool has_prev = k > total - active;
    n += conv(s.cin, s.c, 3);
    if (has_prev && cfg.sfe_fusion == SfeFusion::kConcat) n += conv(2 * s.c, s.c, 1);
    n += conv(s.c, s.c, lv.patch_size);
    if (cfg.features.use_cat) {
      const std::int64_t g = lv.token_edge() / cfg.cat_stride();
      n += conv(s.c, s.c, cfg.cat_stride()) + g * g * g * s.c;
    }
    for (int b = 0; b < lv.num_blocks; ++b) {
      for (int t = 0; t < lv.layers_per_block; ++t) n += svhat_params(cfg, has_prev && t == 0);
      n += streams * (lv.layers_per_block * linear(s.c, s.skip) + linear(s.c + lv.layers_per_block * s.skip, s.c));
    }
  }
  const std::int64_t half = s.c / 2;
  n += conv(s.c, s.c, cfg.finest().patch_size);  // transposed conv has the same count
  n += 2 * conv(s.c, s.c, 3) + conv(s.c, half, 1);
  for (int r : cfg.upsample_stages()) n += conv(half, half * r * r * r, 3);
  n += conv(half, s.cin, 1);
  return n;
}

std::map<std::string, std::int64_t> analytic_activation_counts(const ModelConfig& cfg, std::int64_t batch) {
  validate(cfg);
  const auto s = sizes_of(cfg);
  const bool use_cat = cfg.features.use_cat;
  const std::int64_t m = cfg.window;
  const std::int64_t c = use_cat ? cfg.cat_edge : 0;
  const std::int64_t t_len = m * m * m + c * c * c;
  std::map<std::string, std::int64_t> out;
  const int total = static_cast<int>(cfg.levels.size());
  const int active = cfg.active_levels();
  for (int k = total - active; k < total; ++k) {
    const auto& lv = cfg.levels[static_cast<std::size_t>(k)];
    const std::string tag = "level" + std::to_string(total - k);
    const std::int64_t e = lv.context_extent;
    const std::int64_t g = lv.token_edge();
    const std::int64_t ites = g * g * g;
    const std::int64_t nw = (g / m) * (g / m) * (g / m);
    const std::int64_t cats = nw * c * c * c;
    out[tag + ".sfe"] = batch * s.c * e * e * e;
    if (k > total - active) out[tag + ".fused"] = batch * s.c * e * e * e;
    out[tag + ".embed"] = batch * ites * s.c;
    if (use_cat) out[tag + ".cat_init"] = batch * cats * s.c;
    for (int b = 0; b < lv.num_blocks; ++b) {
      const std::string bt = tag + ".b" + std::to_string(b);
      for (int t = 0; t < lv.layers_per_block; ++t) {
        const std::string lt = bt + ".l" + std::to_string(t);
        if (use_cat) {
          out[lt + ".cat_attn.weights"] = batch * s.heads * cats * cats;
          out[lt + ".cat_attn.out"] = batch * cats * s.c;
          out[lt + ".out.cats"] = batch * cats * s.c;
        }
        out[lt + ".window_attn.weights"] = batch * nw * s.heads * t_len * t_len;
        out[lt + ".out.ites"] = batch * ites * s.c;
      }
      const std::int64_t dense = s.c + lv.layers_per_block * s.skip;
      out[bt + ".dense.ites"] = batch * ites * dense;
      if (use_cat) out[bt + ".dense.cats"] = batch * cats * dense;
    }
  }
  const std::int64_t e1 = cfg.finest().context_extent;
  const std::int64_t vol = e1 * e1 * e1;
  for (const char* key : {"head.deconv", "head.pre1", "head.pre_act", "head.pre2", "head.skip"}) {
    out[key] = batch * s.c * vol;
  }
  const std::int64_t half = s.c / 2;
  out["head.halve"] = batch * half * vol;
  std::int64_t edge = e1;
  const auto stages = cfg.upsample_stages();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::int64_t r = stages[i];
    const std::string st = "head.stage" + std::to_string(i);
    out[st + ".preconv"] = batch * half * r * r * r * edge * edge * edge;
    edge *= r;
    out[st + ".shuffle"] = batch * half * edge * edge * edge;
  }
  out["head.out"] = batch * s.cin * edge * edge * edge;
  return out;
}

std::int64_t analytic_activation_total(const ModelConfig& cfg, std::int64_t batch) {
  std::int64_t t = 0;
  for (const auto& [k, v] : analytic_activation_counts(cfg, batch)) t += v;
  return t;
}

ModelConfig with_resolution(const ModelConfig& cfg, int resolution) {
  ModelConfig out = cfg;
  int e = resolution;
  for (auto& lv : out.levels) {
    lv.context_extent = e;
    e /= 2;
  }
  return out;
}

std::map<std::string, std::int64_t> record_forward_activations(Mtvnet& net, std::int64_t batch) {
  const auto& cfg = net->config();
  const auto dtype = net->parameters().front().scalar_type();
  std::vector<torch::Tensor> contexts;
  for (const auto& lv : cfg.levels) {
    const std::int64_t e = lv.context_extent;
    contexts.push_back(torch::rand({batch, cfg.in_channels, e, e, e}, torch::TensorOptions().dtype(dtype)));
  }
  ActivationRecorder rec;
  {
    torch::NoGradGuard guard;
    ScopedActivationRecorder scope(rec);
    net->forward(contexts);
  }
  return rec.counts();
}

std::vector<ProfileRow> profile_memory(const ModelConfig& cfg, const std::string& label,
                                       const std::vector<int>& resolutions, const ProfileOptions& opts) {
  std::vector<ProfileRow> rows;
  for (int r : resolutions) {
    ProfileRow row;
    row.label = label;
    row.resolution = r;
    const auto rc = with_resolution(cfg, r);
    try {
      validate(rc);
    } catch (const ConfigError& e) {
      row.error = e.what();
      rows.push_back(row);
      continue;
    }
    row.valid = true;
    auto counts = derive_token_counts(rc);
    const int total = static_cast<int>(rc.levels.size());
    row.levels.assign(counts.begin() + (total - rc.active_levels()), counts.end());
    for (const auto& l : row.levels) {
      row.total_ites += l.n_ites;
      row.total_cats += l.n_cats;
    }
    row.parameters = analytic_parameter_count(rc);
    row.activation_elements = analytic_activation_total(rc, opts.batch);
    if (opts.measure) {
      torch::manual_seed(0);
      Mtvnet net(rc);
      std::int64_t recorded = 0;
      {
        PeakMemoryScope peak;
        for (const auto& [k, v] : record_forward_activations(net, opts.batch)) recorded += v;
        row.peak_bytes = peak.peak_bytes();
      }
      row.recorded_elements = recorded;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string profile_csv(const std::vector<ProfileRow>& rows) {
  std::ostringstream out;
  out << "label,resolution,valid,levels,ites_per_level,total_ites,total_cats,parameters,activation_elements,"
         "recorded_elements,peak_bytes,error\n";
  for (const auto& r : rows) {
    std::string per_level;
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
      if (i) per_level += ';';
      per_level += std::to_string(r.levels[i].n_ites);
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out << r.label << ',' << r.resolution << ',' << (r.valid ? 1 : 0) << ',' << r.levels.size() << ',' << per_level
        << ',' << r.total_ites << ',' << r.total_cats << ',' << r.parameters << ',' << r.activation_elements << ','
        << (r.recorded_elements ? std::to_string(*r.recorded_elements) : "") << ','
        << (r.peak_bytes ? std::to_string(*r.peak_bytes) : "") << ',' << err << '\n';
  }
  return out.str();
}

}  // namespace mtvnet
