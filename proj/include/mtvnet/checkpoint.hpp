#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace mtvnet {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Versioned single-file checkpoint:
///
///   MTVCKPT1
///   iteration <n>
///   config <bytes>\n<config text>
///   rng <bytes>\n<generator state text>
///   tensors <count>
///   tensor <name> <dtype> <rank> <dim...> <bytes>\n<raw little-endian data>
///   ...
///   end
///
/// Names use the prefixes "param:", "adam_m:" and "adam_v:".
struct Checkpoint {
  std::int64_t iteration = 0;
  std::string config_text;
  std::string rng_state;
  NamedTensors tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Name and shape of every stored tensor, read without loading payloads.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> read_manifest(const std::filesystem::path& path);

/// Module parameters keyed "param:<dotted name>".
NamedTensors module_state(torch::nn::Module& module);
/// Copies "param:" tensors into the module; every parameter must be present
/// with a matching shape.
void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt);

}  // namespace mtvnet
