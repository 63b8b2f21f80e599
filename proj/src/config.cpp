#include "mtvnet/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "mtvnet/io_util.hpp"

namespace mtvnet {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config invariant violated: " + what);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError("parse error: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("parse error: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("parse error: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("parse error: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("parse error: key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  for (const auto& item : split(v, ',')) out.push_back(parse(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) ss << ',';
    if constexpr (std::is_floating_point_v<T>) {
      ss << format_double(xs[i]);
    } else {
      ss << xs[i];
    }
  }
  return ss.str();
}

const char* to_string(SfeFusion f) { return f == SfeFusion::kAdd ? "add" : "concat"; }
const char* to_string(AttentionScore a) {
  return a == AttentionScore::kDotProduct ? "dot" : "cosine";
}
const char* to_string(bool b) { return b ? "true" : "false"; }

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues tokenize(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("parse error at line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto key = trim(std::string_view(t).substr(0, eq));
    auto value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("parse error at line " + std::to_string(lineno) + ": empty key");
    }
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

void finalize_milestones(TrainConfig& t) {
  if (!t.milestone_fractions.empty()) {
    t.milestones = milestones_from_fractions(t.milestone_fractions, t.total_iters);
  }
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& v) {
  auto& m = cfg.model;
  if (key.rfind("level.", 0) == 0) {
    auto parts = split(key, '.');
    if (parts.size() != 3) throw ConfigError("parse error: malformed level key '" + key + "'");
    int idx = parse_int(key, parts[1]);
    if (idx < 0 || idx >= static_cast<int>(m.levels.size())) {
      throw ConfigError("parse error: '" + key + "' refers to a level beyond model.levels = " +
                        std::to_string(m.levels.size()));
    }
    auto& lv = m.levels[static_cast<std::size_t>(idx)];
    const auto& field = parts[2];
    if (field == "patch_size") lv.patch_size = parse_int(key, v);
    else if (field == "context_extent") lv.context_extent = parse_int(key, v);
    else if (field == "blocks") lv.num_blocks = parse_int(key, v);
    else if (field == "layers") lv.layers_per_block = parse_int(key, v);
    else throw ConfigError("parse error: unknown key '" + key + "'");
    return;
  }
  static const std::map<std::string, std::function<void(ExperimentConfig&, const std::string&, const std::string&)>>
      setters = {
          {"model.window", [](auto& c, auto& k, auto& x) { c.model.window = parse_int(k, x); }},
          {"model.cat_edge", [](auto& c, auto& k, auto& x) { c.model.cat_edge = parse_int(k, x); }},
          {"model.emb_channels", [](auto& c, auto& k, auto& x) { c.model.emb_channels = parse_int(k, x); }},
          {"model.skip_channels", [](auto& c, auto& k, auto& x) { c.model.skip_channels = parse_int(k, x); }},
          {"model.in_channels", [](auto& c, auto& k, auto& x) { c.model.in_channels = parse_int(k, x); }},
          {"model.scale", [](auto& c, auto& k, auto& x) { c.model.scale = parse_int(k, x); }},
          {"model.heads", [](auto& c, auto& k, auto& x) { c.model.heads = parse_int(k, x); }},
          {"model.mlp_ratio", [](auto& c, auto& k, auto& x) { c.model.mlp_ratio = parse_double(k, x); }},
          {"model.gamma_init", [](auto& c, auto& k, auto& x) { c.model.gamma_init = parse_double(k, x); }},
          {"model.leaky_slope", [](auto& c, auto& k, auto& x) { c.model.leaky_slope = parse_double(k, x); }},
          {"model.layer_norm_eps", [](auto& c, auto& k, auto& x) { c.model.layer_norm_eps = parse_double(k, x); }},
          {"model.max_full_attention_cats",
           [](auto& c, auto& k, auto& x) { c.model.max_full_attention_cats = parse_int(k, x); }},
          {"model.sfe_fusion",
           [](auto& c, auto& k, auto& x) {
             if (x == "add") c.model.sfe_fusion = SfeFusion::kAdd;
             else if (x == "concat") c.model.sfe_fusion = SfeFusion::kConcat;
             else throw ConfigError("parse error: key '" + k + "' expects add|concat");
           }},
          {"model.attention_score",
           [](auto& c, auto& k, auto& x) {
             if (x == "dot") c.model.attention_score = AttentionScore::kDotProduct;
             else if (x == "cosine") c.model.attention_score = AttentionScore::kCosine;
             else throw ConfigError("parse error: key '" + k + "' expects dot|cosine");
           }},
          {"features.use_cyclic_shift",
           [](auto& c, auto& k, auto& x) { c.model.features.use_cyclic_shift = parse_bool(k, x); }},
          {"features.use_cat", [](auto& c, auto& k, auto& x) { c.model.features.use_cat = parse_bool(k, x); }},
          {"features.use_multicontext",
           [](auto& c, auto& k, auto& x) { c.model.features.use_multicontext = parse_bool(k, x); }},
          {"train.batch_size", [](auto& c, auto& k, auto& x) { c.train.batch_size = parse_int(k, x); }},
          {"train.lr", [](auto& c, auto& k, auto& x) { c.train.lr = parse_double(k, x); }},
          {"train.beta1", [](auto& c, auto& k, auto& x) { c.train.beta1 = parse_double(k, x); }},
          {"train.beta2", [](auto& c, auto& k, auto& x) { c.train.beta2 = parse_double(k, x); }},
          {"train.eps", [](auto& c, auto& k, auto& x) { c.train.eps = parse_double(k, x); }},
          {"train.weight_decay", [](auto& c, auto& k, auto& x) { c.train.weight_decay = parse_double(k, x); }},
          {"train.milestones",
           [](auto& c, auto& k, auto& x) {
             c.train.milestones = parse_list<std::int64_t>(k, x, parse_i64);
             c.train.milestone_fractions.clear();
           }},
          {"train.milestone_fractions",
           [](auto& c, auto& k, auto& x) { c.train.milestone_fractions = parse_list<double>(k, x, parse_double); }},
          {"train.total_iters", [](auto& c, auto& k, auto& x) { c.train.total_iters = parse_i64(k, x); }},
          {"train.loss", [](auto& c, auto&, auto& x) { c.train.loss = x; }},
          {"train.seed", [](auto& c, auto& k, auto& x) { c.train.seed = parse_u64(k, x); }},
          {"train.grad_clip", [](auto& c, auto& k, auto& x) { c.train.grad_clip = parse_double(k, x); }},
          {"train.checkpoint_every", [](auto& c, auto& k, auto& x) { c.train.checkpoint_every = parse_i64(k, x); }},
          {"train.blur", [](auto& c, auto& k, auto& x) { c.train.blur = parse_bool(k, x); }},
          {"train.padding", [](auto& c, auto& k, auto& x) { c.train.padding = parse_bool(k, x); }},
      };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("parse error: unknown key '" + key + "'");
  it->second(cfg, key, v);
}

// `preset` and `model.levels` must be applied before the keys that depend on
// them, regardless of their position in the text.
ExperimentConfig apply_all(ExperimentConfig cfg, const KeyValues& kv) {
  bool fractions_seen = false;
  bool milestones_seen = false;
  for (const auto& [k, v] : kv) {
    if (k == "preset") cfg = preset(v);
  }
  for (const auto& [k, v] : kv) {
    if (k == "model.levels") {
      int n = parse_int(k, v);
      if (n < 1 || n > 3) throw ConfigError("config invariant violated: model.levels must be 1, 2 or 3");
      cfg.model.levels.resize(static_cast<std::size_t>(n));
    }
  }
  for (const auto& [k, v] : kv) {
    if (k == "preset" || k == "model.levels") continue;
    if (k == "train.milestones") milestones_seen = true;
    if (k == "train.milestone_fractions") fractions_seen = true;
    apply_key(cfg, k, v);
  }
  if (milestones_seen && fractions_seen && !cfg.train.milestone_fractions.empty()) {
    throw ConfigError("parse error: give either train.milestones or train.milestone_fractions, not both");
  }
  finalize_milestones(cfg.train);
  return cfg;
}

}  // namespace

std::vector<int> ModelConfig::upsample_stages() const {
  switch (scale) {
    case 1: return {};
    case 2: return {2};
    case 3: return {3};
    case 4: return {2, 2};
    default: throw ConfigError("config invariant violated: scale must be one of 1, 2, 3, 4");
  }
}

void validate(const ModelConfig& cfg) {
  const auto n = cfg.levels.size();
  require(n >= 1 && n <= 3, "level count must be 1, 2 or 3");
  require(cfg.window >= 1, "window size M must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& lv = cfg.levels[i];
    const auto tag = "level " + std::to_string(i) + ": ";
    require(lv.patch_size >= 1, tag + "patch size must be positive");
    require(lv.context_extent >= 1, tag + "context extent must be positive");
    require(lv.context_extent % lv.patch_size == 0, tag + "context_extent divisible by patch size");
    require(lv.token_edge() % cfg.window == 0, tag + "token grid edge divisible by window size M");
    require(lv.num_blocks >= 1 && lv.num_blocks <= 3, tag + "DCHAT blocks per group must be 1, 2 or 3");
    require(lv.layers_per_block >= 1, tag + "at least one SVHAT layer per block");
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto& outer = cfg.levels[i];
    const auto& inner = cfg.levels[i + 1];
    const auto tag = "levels " + std::to_string(i) + "/" + std::to_string(i + 1) + ": ";
    require(outer.context_extent > inner.context_extent, tag + "context extents strictly decreasing (coarsest first)");
    require(outer.context_extent % 2 == 0 && inner.context_extent % 2 == 0, tag + "context extents even");
    require(outer.token_edge() == inner.token_edge(),
            tag + "equal token-grid edges across levels (cross-level window correspondence)");
  }
  if (cfg.features.use_cat) {
    require(cfg.cat_edge >= 1, "CAT edge c must be positive");
    require(cfg.window / cfg.cat_edge >= 1, "floor(M/c) >= 1");
    require(cfg.window % cfg.cat_edge == 0, "c divides M (each window owns a c^3 CAT block)");
    const std::int64_t g = cfg.cat_grid_edge();
    require(g * g * g <= cfg.max_full_attention_cats, "CAT count within max_full_attention_cats");
  }
  if (cfg.features.use_cyclic_shift) {
    require(cfg.window % 2 == 0, "M even when use_cyclic_shift (shift floor(M/2) must be positive)");
    if (cfg.features.use_cat) {
      require(cfg.cat_edge % 2 == 0, "c even when use_cyclic_shift (shift floor(c/2) must be positive)");
    }
  }
  require(cfg.emb_channels >= 2 && cfg.emb_channels % 2 == 0, "C_emb even (channel halving before upsampling)");
  require(cfg.heads >= 1 && cfg.emb_channels % cfg.heads == 0, "C_emb divisible by heads");
  require(cfg.skip_channels >= 1, "C_skip positive");
  require(cfg.in_channels >= 1, "C_in positive");
  require(cfg.scale >= 1 && cfg.scale <= 4, "scale must be one of 1, 2, 3, 4");
  require(cfg.mlp_ratio > 0 && std::lround(cfg.mlp_ratio * cfg.emb_channels) >= 1, "mlp_ratio positive");
  require(cfg.gamma_init >= 0, "gamma_init non-negative");
  require(cfg.leaky_slope >= 0, "leaky_slope non-negative");
  require(cfg.layer_norm_eps > 0, "layer_norm_eps positive");
}

void validate(const TrainConfig& t) {
  require(t.batch_size >= 1, "batch_size positive");
  require(t.lr > 0, "lr positive");
  require(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1, "betas in [0, 1)");
  require(t.eps > 0, "eps positive");
  require(t.weight_decay >= 0, "weight_decay non-negative");
  require(t.total_iters >= 1, "total_iters positive");
  for (std::size_t i = 0; i < t.milestones.size(); ++i) {
    require(t.milestones[i] > 0 && t.milestones[i] < t.total_iters, "milestones within (0, total_iters)");
    if (i) require(t.milestones[i] > t.milestones[i - 1], "milestones strictly increasing");
  }
  for (double f : t.milestone_fractions) require(f > 0 && f < 1, "milestone fractions within (0, 1)");
  require(t.loss == "l1", "loss must be 'l1'");
  require(t.grad_clip >= 0, "grad_clip non-negative");
  require(t.checkpoint_every >= 0, "checkpoint_every non-negative");
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.model);
  validate(cfg.train);
}

std::vector<LevelTokenCounts> derive_token_counts(const ModelConfig& cfg) {
  std::vector<LevelTokenCounts> out;
  for (const auto& lv : cfg.levels) {
    const std::int64_t g = lv.token_edge();
    const std::int64_t w = g / cfg.window;
    LevelTokenCounts c;
    c.n_ites = g * g * g;
    c.n_windows = w * w * w;
    const std::int64_t c3 = static_cast<std::int64_t>(cfg.cat_edge) * cfg.cat_edge * cfg.cat_edge;
    c.n_cats = cfg.features.use_cat ? c.n_windows * c3 : 0;
    out.push_back(c);
  }
  return out;
}

std::vector<std::int64_t> milestones_from_fractions(const std::vector<double>& fractions,
                                                    std::int64_t total_iters) {
  std::vector<std::int64_t> out;
  for (double f : fractions) {
    const auto m = static_cast<std::int64_t>(std::llround(f * static_cast<double>(total_iters)));
    // Short runs round several fractions onto the same iteration; keep one.
    if (m > 0 && m < total_iters && (out.empty() || m > out.back())) out.push_back(m);
  }
  return out;
}

std::vector<std::string> preset_names() { return {"desk", "desk2", "L1", "L2", "L3"}; }

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  auto& m = cfg.model;
  auto& t = cfg.train;
  t.milestone_fractions = {0.5, 0.7, 0.85, 0.95};
  if (name == "L1" || name == "L2" || name == "L3") {
    m.window = 8;
    m.cat_edge = 4;
    m.emb_channels = 128;
    m.skip_channels = 64;
    m.scale = 4;
    m.levels.clear();
    if (name == "L3") m.levels.push_back({8, 128, 1, 6});
    if (name != "L1") m.levels.push_back({4, 64, 2, 6});
    m.levels.push_back({2, 32, 3, 6});
    t.batch_size = 5;
    t.lr = 2e-4;
    t.total_iters = 100000;
  } else if (name == "desk" || name == "desk2") {
    m.window = 4;
    m.cat_edge = 2;
    m.emb_channels = 32;
    m.skip_channels = 16;
    m.scale = 2;
    m.levels.clear();
    if (name == "desk2") m.levels.push_back({4, 32, 1, 2});
    m.levels.push_back({2, 16, 1, 2});
    t.batch_size = 2;
    t.lr = 2e-3;
    t.total_iters = 2000;
    t.seed = 1;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  finalize_milestones(t);
  return cfg;
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
  return apply_all(base, tokenize(text));
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& assignments) {
  KeyValues kv;
  for (const auto& a : assignments) {
    auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    kv.emplace_back(trim(std::string_view(a).substr(0, eq)), trim(std::string_view(a).substr(eq + 1)));
  }
  return apply_all(cfg, kv);
}

std::string to_text(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  std::ostringstream o;
  o << "# mtvnet experiment config\n";
  o << "model.levels = " << m.levels.size() << "\n";
  for (std::size_t i = 0; i < m.levels.size(); ++i) {
    const auto& lv = m.levels[i];
    o << "level." << i << ".patch_size = " << lv.patch_size << "\n";
    o << "level." << i << ".context_extent = " << lv.context_extent << "\n";
    o << "level." << i << ".blocks = " << lv.num_blocks << "\n";
    o << "level." << i << ".layers = " << lv.layers_per_block << "\n";
  }
  o << "model.window = " << m.window << "\n";
  o << "model.cat_edge = " << m.cat_edge << "\n";
  o << "model.emb_channels = " << m.emb_channels << "\n";
  o << "model.skip_channels = " << m.skip_channels << "\n";
  o << "model.in_channels = " << m.in_channels << "\n";
  o << "model.scale = " << m.scale << "\n";
  o << "model.heads = " << m.heads << "\n";
  o << "model.mlp_ratio = " << format_double(m.mlp_ratio) << "\n";
  o << "model.gamma_init = " << format_double(m.gamma_init) << "\n";
  o << "model.leaky_slope = " << format_double(m.leaky_slope) << "\n";
  o << "model.layer_norm_eps = " << format_double(m.layer_norm_eps) << "\n";
  o << "model.max_full_attention_cats = " << m.max_full_attention_cats << "\n";
  o << "model.sfe_fusion = " << to_string(m.sfe_fusion) << "\n";
  o << "model.attention_score = " << to_string(m.attention_score) << "\n";
  o << "features.use_cyclic_shift = " << to_string(m.features.use_cyclic_shift) << "\n";
  o << "features.use_cat = " << to_string(m.features.use_cat) << "\n";
  o << "features.use_multicontext = " << to_string(m.features.use_multicontext) << "\n";
  o << "train.batch_size = " << t.batch_size << "\n";
  o << "train.lr = " << format_double(t.lr) << "\n";
  o << "train.beta1 = " << format_double(t.beta1) << "\n";
  o << "train.beta2 = " << format_double(t.beta2) << "\n";
  o << "train.eps = " << format_double(t.eps) << "\n";
  o << "train.weight_decay = " << format_double(t.weight_decay) << "\n";
  o << "train.total_iters = " << t.total_iters << "\n";
  if (t.milestone_fractions.empty()) {
    o << "train.milestones = " << join(t.milestones) << "\n";
  } else {
    o << "train.milestone_fractions = " << join(t.milestone_fractions) << "\n";
    o << "# resolved milestones: " << join(t.milestones) << "\n";
  }
  o << "train.loss = " << t.loss << "\n";
  o << "train.seed = " << t.seed << "\n";
  o << "train.grad_clip = " << format_double(t.grad_clip) << "\n";
  o << "train.checkpoint_every = " << t.checkpoint_every << "\n";
  o << "train.blur = " << to_string(t.blur) << "\n";
  o << "train.padding = " << to_string(t.padding) << "\n";
  return o.str();
}

ExperimentConfig load_config(const std::string& path) {
  auto cfg = parse_config(read_text_file(path));
  validate(cfg);
  return cfg;
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  atomic_write_text(path, to_text(cfg));
}

}  // namespace mtvnet
