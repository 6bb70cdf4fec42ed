#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shanshui/adam.hpp"
#include "shanshui/dataset.hpp"
#include "shanshui/image_pool.hpp"
#include "shanshui/losses.hpp"

namespace shanshui::train {

struct TrainConfig {
  int epochs_constant = 100;
  int epochs_decay = 100;
  double lr0 = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int batch_size = 1;
  int image_load_size = 286;
  int image_crop_size = 256;
  int pool_capacity = 50;
  nn::LossWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_every = 5;

  int generator_filters = 64;
  int n_res_blocks = 0;  // 0: nn::default_res_blocks(image_crop_size)
  int discriminator_filters = 64;
  int discriminator_layers = 3;

  int total_epochs() const { return epochs_constant + epochs_decay; }
  nn::ModelConfig model() const;
  nn::AdamConfig adam() const { return {adam_beta1, adam_beta2, 1e-8}; }
  void validate() const;  // throws DomainError
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are a DomainError.
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr0 for the constant phase, then linear decay towards zero.
double learning_rate(int epoch, const TrainConfig& cfg);

// Epoch-wise shuffles of both domains. Each epoch starts from fresh
// permutations; a domain that runs out mid-epoch is reshuffled.
class UnpairedSampler {
 public:
  UnpairedSampler() = default;
  UnpairedSampler(std::size_t size_a, std::size_t size_b);

  void begin_epoch(Rng& rng);
  std::pair<std::size_t, std::size_t> next(Rng& rng);

  std::size_t iterations_per_epoch(int batch_size) const;
  std::size_t size(int domain) const { return perm_[domain].size(); }

  nlohmann::json state() const;
  void restore(const nlohmann::json& j);

 private:
  std::size_t draw(int domain, Rng& rng);

  std::array<std::vector<std::size_t>, 2> perm_;
  std::array<std::size_t, 2> cursor_{0, 0};
};

// Resize to load_size x load_size, random crop_size crop, optional flip,
// values mapped to [-1, 1]. Draws: crop row, crop column, then the flip.
nn::TensorImage<float> augment(const Raster& img, int load_size, int crop_size, Rng& rng,
                               bool allow_flip = true);

struct MetricsRecord {
  std::int64_t iteration = 0;
  int epoch = 0;
  nn::GeneratorLossTerms<double> generator;
  double discriminator_a = 0;
  double discriminator_b = 0;
  double lr = 0;
  double wall_ms = 0;

  bool operator==(const MetricsRecord&) const;
  // Equality without the wall-clock field.
  bool same_losses(const MetricsRecord& o) const;
};

nlohmann::json to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

struct TrainState {
  TrainConfig config;
  int epoch = 0;  // completed epochs
  std::int64_t iteration = 0;
  nn::ParameterSet<float> params;
  nn::AdamState<float> adam;
  nn::ImagePool<float> pool_a;  // generated sketches F(b)
  nn::ImagePool<float> pool_b;  // generated paintings G(a)
  Rng rng;
  UnpairedSampler sampler;
};

TrainState init_train_state(const TrainConfig& cfg, std::size_t size_a, std::size_t size_b);

struct Batch {
  std::vector<nn::TensorImage<float>> a;
  std::vector<nn::TensorImage<float>> b;
};

// One generator update followed by one update of each discriminator on
// pool-replayed fakes. Throws TrainingError naming the first non-finite term.
MetricsRecord train_step(TrainState& state, const Batch& batch, double lr);

// Train-split images of both domains, decoded once.
struct DomainImages {
  std::vector<Raster> a;
  std::vector<Raster> b;
};

DomainImages load_train_images(const std::filesystem::path& dataset_root,
                               const data::DatasetManifest& manifest);

// Draws the next batch with the sampler and augments it.
Batch sample_unpaired_batch(TrainState& state, const DomainImages& images);

// Up to `count` sketches for periodic samples: the test split of domain A,
// else its train split, resized to crop_size.
std::vector<nn::TensorImage<float>> fixed_sample_sketches(
    const std::filesystem::path& dataset_root, const data::DatasetManifest& manifest,
    int crop_size, int count);

// Writes sketch | G(sketch) | F(G(sketch)) per sketch as sample_<i>.png.
std::vector<std::filesystem::path> sample_outputs(
    const nn::ParameterSet<float>& params,
    const std::vector<nn::TensorImage<float>>& fixed_sketches,
    const std::filesystem::path& out_dir);

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const MetricsRecord&)> on_iteration;
  // Stop once this many epochs are complete (as if interrupted).
  std::optional<int> stop_after_epoch;
  int sample_count = 3;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<MetricsRecord> metrics;  // records produced by this call
  TrainState state;
};

// Runs the remaining epochs, writing checkpoints/, metrics.jsonl and
// samples/ under out_dir.
TrainResult train(const std::filesystem::path& dataset_root, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

}  // namespace shanshui::train
