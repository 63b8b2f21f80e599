#pragma once

#include <vector>

#include <torch/torch.h>

#include "mtvnet/network.hpp"
#include "mtvnet/volume.hpp"

namespace mtvnet {

/// Anything that maps nested LR contexts to an SR prediction of the
/// innermost context. Contexts are [N, C, e_k, e_k, e_k], coarsest first;
/// the result is [N, C, s*e_last, s*e_last, s*e_last].
class SrModel {
 public:
  virtual ~SrModel() = default;
  virtual int scale() const = 0;
  virtual std::vector<int> context_extents() const = 0;
  virtual PadMode pad_mode() const { return PadMode::kReflect; }
  virtual torch::Tensor predict(const std::vector<torch::Tensor>& contexts) = 0;
};

/// Built-in baseline: trilinear upsampling. It reads a one-voxel halo around
/// the prediction region so tiled output equals whole-volume upsampling.
class TrilinearUpsampler : public SrModel {
 public:
  TrilinearUpsampler(int scale, int extent) : scale_(scale), extent_(extent) {}
  int scale() const override { return scale_; }
  std::vector<int> context_extents() const override { return {extent_ + 2, extent_}; }
  PadMode pad_mode() const override { return PadMode::kReplicate; }
  torch::Tensor predict(const std::vector<torch::Tensor>& contexts) override;

 private:
  int scale_;
  int extent_;
};

/// Inference wrapper around a trained network (no autograd, eval dtype float32).
class MtvnetSrModel : public SrModel {
 public:
  explicit MtvnetSrModel(Mtvnet net) : net_(std::move(net)) {}
  int scale() const override { return net_->config().scale; }
  std::vector<int> context_extents() const override { return mtvnet::context_extents(net_->config()); }
  torch::Tensor predict(const std::vector<torch::Tensor>& contexts) override;
  Mtvnet& net() { return net_; }

 private:
  Mtvnet net_;
};

}  // namespace mtvnet
