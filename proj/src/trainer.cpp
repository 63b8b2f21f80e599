#include "mtvnet/trainer.hpp"

#include <cmath>
#include <sstream>

#include "mtvnet/io_util.hpp"

namespace mtvnet {

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw std::invalid_argument("l1_loss: prediction and target shapes differ");
  return (pred - target).abs().mean();
}

double lr_at(const TrainConfig& cfg, std::int64_t iter) {
  double lr = cfg.lr;
  for (auto m : cfg.milestones)
    if (iter > m) lr *= 0.5;
  return lr;
}

Adam::Adam(NamedTensors params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::step(double lr) {
  for (const auto& [name, p] : params_) {
    const auto& g = p.grad();
    if (g.defined() && !torch::isfinite(g).all().item<bool>()) {
      throw TrainingError("non-finite gradient in parameter " + name + " at optimizer step " +
                          std::to_string(steps_ + 1));
    }
  }
  torch::NoGradGuard guard;
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    torch::Tensor g = p.grad().defined() ? p.grad() : torch::zeros_like(p);
    if (opts_.weight_decay != 0.0) g = g + opts_.weight_decay * p;
    m_[i].mul_(opts_.beta1).add_(g, 1.0 - opts_.beta1);
    v_[i].mul_(opts_.beta2).addcmul_(g, g, 1.0 - opts_.beta2);
    auto denom = (v_[i] / bc2).sqrt_().add_(opts_.eps);
    p.addcdiv_(m_[i], denom, -lr / bc1);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto name = params_[i].first.substr(params_[i].first.find(':') + 1);
    out.emplace_back("adam_m:" + name, m_[i]);
    out.emplace_back("adam_v:" + name, v_[i]);
  }
  return out;
}

void Adam::load_state(const Checkpoint& ckpt, std::int64_t steps) {
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto name = params_[i].first.substr(params_[i].first.find(':') + 1);
    const auto* m = ckpt.find("adam_m:" + name);
    const auto* v = ckpt.find("adam_v:" + name);
    if (m == nullptr || v == nullptr) throw std::runtime_error("checkpoint is missing optimizer moments for " + name);
    m_[i].copy_(*m);
    v_[i].copy_(*v);
  }
  steps_ = steps;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream out;
  out << "iter,loss,lr\n";
  for (const auto& r : trace) out << r.iter << ',' << format_double(r.loss) << ',' << format_double(r.lr) << '\n';
  return out.str();
}

VolumePair make_training_pair(const Volume& hr, const ExperimentConfig& cfg) {
  return {hr, degrade(hr, cfg.model.scale, cfg.train.blur)};
}

Trainer::Trainer(const ExperimentConfig& cfg, std::vector<VolumePair> data)
    : cfg_(cfg), data_(std::move(data)), rng_(cfg.train.seed) {
  validate(cfg_);
  if (data_.empty()) throw TrainingError("no training volumes");
  torch::manual_seed(cfg_.train.seed);
  net_ = Mtvnet(cfg_.model);
  adam_.emplace(module_state(*net_),
                AdamOptions{cfg_.train.beta1, cfg_.train.beta2, cfg_.train.eps, cfg_.train.weight_decay});
}

LossRecord Trainer::step() {
  const auto& tc = cfg_.train;
  const std::int64_t iter = iteration_ + 1;
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<std::vector<torch::Tensor>> levels;
  std::vector<torch::Tensor> targets;
  for (int b = 0; b < tc.batch_size; ++b) {
    const auto& pair = data_[pick(rng_)];
    auto patch = sample_nested(pair.lr, pair.hr, cfg_.model, tc.padding, rng_);
    if (levels.empty()) levels.resize(patch.lr_contexts.size());
    for (std::size_t l = 0; l < patch.lr_contexts.size(); ++l) levels[l].push_back(patch.lr_contexts[l]);
    targets.push_back(patch.hr_target);
  }
  std::vector<torch::Tensor> contexts;
  for (auto& l : levels) contexts.push_back(torch::stack(l));
  auto target = torch::stack(targets);

  adam_->zero_grad();
  auto loss = mtvnet::l1_loss(net_->forward(contexts), target);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite loss at iteration " + std::to_string(iter) + " (lr " +
                        format_double(lr_at(tc, iter)) + ")");
  }
  loss.backward();
  if (tc.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(net_->parameters(), tc.grad_clip);
  const double lr = lr_at(tc, iter);
  adam_->step(lr);
  iteration_ = iter;
  LossRecord rec{iter, value, lr};
  trace_.push_back(rec);
  return rec;
}

void Trainer::run(std::int64_t until, const std::function<void(const LossRecord&)>& on_step) {
  if (until < 0) until = cfg_.train.total_iters;
  while (iteration_ < until) {
    auto rec = step();
    if (on_step) on_step(rec);
    if (!out_dir_.empty() && cfg_.train.checkpoint_every > 0 && iteration_ % cfg_.train.checkpoint_every == 0) {
      write_artifacts();
    }
  }
  if (!out_dir_.empty()) write_artifacts();
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ck;
  ck.iteration = iteration_;
  ck.config_text = to_text(cfg_);
  std::ostringstream rng;
  rng << rng_;
  ck.rng_state = rng.str();
  ck.tensors = module_state(*net_.ptr());
  for (auto& t : adam_->state()) ck.tensors.push_back(std::move(t));
  auto trace = torch::empty({static_cast<std::int64_t>(trace_.size()), 3}, torch::kFloat64);
  for (std::size_t i = 0; i < trace_.size(); ++i) {
    trace[static_cast<std::int64_t>(i)][0] = static_cast<double>(trace_[i].iter);
    trace[static_cast<std::int64_t>(i)][1] = trace_[i].loss;
    trace[static_cast<std::int64_t>(i)][2] = trace_[i].lr;
  }
  ck.tensors.emplace_back("trace:loss", trace);
  return ck;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_module_state(*net_, ckpt);
  adam_->load_state(ckpt, ckpt.iteration);
  iteration_ = ckpt.iteration;
  std::istringstream rng(ckpt.rng_state);
  rng >> rng_;
  if (!rng) throw std::runtime_error("checkpoint holds an unreadable generator state");
  trace_.clear();
  if (const auto* t = ckpt.find("trace:loss")) {
    auto a = t->accessor<double, 2>();
    for (std::int64_t i = 0; i < t->size(0); ++i) {
      trace_.push_back({static_cast<std::int64_t>(a[i][0]), a[i][1], a[i][2]});
    }
  }
}

void Trainer::write_artifacts() const {
  std::filesystem::create_directories(out_dir_);
  auto ck = make_checkpoint();
  save_checkpoint(ck, out_dir_ / ("ckpt_" + std::to_string(iteration_) + ".mtvckpt"));
  save_checkpoint(ck, out_dir_ / "last.mtvckpt");
  atomic_write_text(out_dir_ / "loss.csv", loss_trace_csv(trace_));
}

}  // namespace mtvnet
