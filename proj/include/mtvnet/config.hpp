#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtvnet {

/// Raised for unparseable config text and for violated configuration
/// invariants. The message names the offending key or constraint.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One contextual level of the network. Levels are stored coarsest-first;
/// the last level is the prediction region.
struct LevelSpec {
  int patch_size = 2;        // voxels per token edge
  int context_extent = 32;   // LR input cube edge at this level
  int num_blocks = 1;        // DCHAT blocks in this level's group
  int layers_per_block = 6;  // SVHAT layers per DCHAT block

  int token_edge() const { return context_extent / patch_size; }
  bool operator==(const LevelSpec&) const = default;
};

struct FeatureFlags {
  bool use_cyclic_shift = true;
  bool use_cat = true;
  bool use_multicontext = true;
  bool operator==(const FeatureFlags&) const = default;
};

enum class SfeFusion { kAdd, kConcat };
enum class AttentionScore { kDotProduct, kCosine };

struct ModelConfig {
  std::vector<LevelSpec> levels;
  int window = 8;           // M, attention window edge in tokens
  int cat_edge = 4;         // c, carrier-token edge per window
  int emb_channels = 128;   // C_emb
  int skip_channels = 64;   // C_skip
  int in_channels = 1;      // C_in
  int scale = 4;            // s
  int heads = 4;
  double mlp_ratio = 2.0;
  FeatureFlags features;

  double gamma_init = 1e-2;
  double leaky_slope = 0.2;
  double layer_norm_eps = 1e-5;
  int max_full_attention_cats = 4096;
  SfeFusion sfe_fusion = SfeFusion::kAdd;
  AttentionScore attention_score = AttentionScore::kDotProduct;

  const LevelSpec& finest() const { return levels.back(); }
  int token_edge() const { return levels.back().token_edge(); }
  /// Ratio floor(M/c): kernel and stride of the CAT initialization.
  int cat_stride() const { return window / cat_edge; }
  int cat_grid_edge() const { return token_edge() / cat_stride(); }
  /// Number of levels that actually run, honouring use_multicontext.
  int active_levels() const {
    return features.use_multicontext ? static_cast<int>(levels.size()) : 1;
  }
  /// Pixel-shuffle stage factors: one stage for s in {2,3}, two x2 stages for s = 4.
  std::vector<int> upsample_stages() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  int batch_size = 5;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<std::int64_t> milestones;  // absolute iterations
  // When non-empty, milestones are recomputed from these fractions of
  // total_iters whenever the config is parsed or overridden.
  std::vector<double> milestone_fractions;
  std::int64_t total_iters = 100000;
  std::string loss = "l1";
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // 0 disables clipping
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  bool blur = true;
  bool padding = false;

  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  bool operator==(const ExperimentConfig&) const = default;
};

struct LevelTokenCounts {
  std::int64_t n_ites = 0;
  std::int64_t n_windows = 0;
  std::int64_t n_cats = 0;
};

/// Throws ConfigError naming the first violated constraint.
void validate(const ModelConfig& cfg);
void validate(const TrainConfig& cfg);
void validate(const ExperimentConfig& cfg);

/// Per-level token bookkeeping, coarsest level first.
std::vector<LevelTokenCounts> derive_token_counts(const ModelConfig& cfg);

/// Named presets: "desk", "desk2", "L1", "L2", "L3".
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Halving points at the given fractions of total_iters (rounded).
std::vector<std::int64_t> milestones_from_fractions(const std::vector<double>& fractions,
                                                    std::int64_t total_iters);

/// Parses the flat key/value format. Unspecified keys keep the defaults of
/// `base`. Every key in the text must be known.
ExperimentConfig parse_config(const std::string& text,
                              const ExperimentConfig& base = ExperimentConfig{});
/// Applies "key=value" overrides (CLI flags) on top of an existing config.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& assignments);
/// Canonical text form: every key, fixed order, round-trips bit-identically.
std::string to_text(const ExperimentConfig& cfg);

/// Reads and validates a config file. A file may start from a preset via
/// the `preset` key.
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace mtvnet
