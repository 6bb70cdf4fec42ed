#include "shanshui/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "shanshui/checkpoint.hpp"
#include "shanshui/convert.hpp"

namespace shanshui::train {

namespace fs = std::filesystem;
using nlohmann::json;

nn::ModelConfig TrainConfig::model() const {
  const int blocks = n_res_blocks > 0 ? n_res_blocks : nn::default_res_blocks(image_crop_size);
  return {{generator_filters, blocks, true}, {discriminator_filters, discriminator_layers}};
}

void TrainConfig::validate() const {
  if (epochs_constant < 0 || epochs_decay < 0 || total_epochs() < 1)
    throw DomainError("epochs must total at least 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw DomainError("lr0 must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw DomainError("adam betas must lie in [0, 1)");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (image_crop_size > image_load_size)
    throw DomainError("image_crop_size must not exceed image_load_size");
  if (image_crop_size < 8 || image_crop_size % 4 != 0)
    throw DomainError("image_crop_size must be a multiple of 4 and at least 8");
  if (pool_capacity < 0) throw DomainError("pool_capacity must be >= 0");
  if (checkpoint_every < 1) throw DomainError("checkpoint_every must be >= 1");
  if (n_res_blocks < 0) throw DomainError("n_res_blocks must be >= 0");
  weights.validate();
  const nn::ModelConfig m = model();
  m.generator.validate();
  m.discriminator.validate();
  if (image_crop_size < nn::min_discriminator_input(m.discriminator)) {
    throw DomainError("image_crop_size " + std::to_string(image_crop_size) +
                      " is below the discriminator minimum " +
                      std::to_string(nn::min_discriminator_input(m.discriminator)));
  }
}

json to_json(const TrainConfig& c) {
  return {{"epochs_constant", c.epochs_constant},
          {"epochs_decay", c.epochs_decay},
          {"lr0", c.lr0},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"batch_size", c.batch_size},
          {"image_load_size", c.image_load_size},
          {"image_crop_size", c.image_crop_size},
          {"pool_capacity", c.pool_capacity},
          {"lambda_cycle", c.weights.lambda_cycle},
          {"lambda_identity", c.weights.lambda_identity},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"generator_filters", c.generator_filters},
          {"n_res_blocks", c.n_res_blocks},
          {"discriminator_filters", c.discriminator_filters},
          {"discriminator_layers", c.discriminator_layers}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("train config must be a JSON object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw DomainError("unknown train config key '" + key + "'");
    if (!value.is_number()) throw DomainError("train config key '" + key + "' must be a number");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs_constant", c.epochs_constant);
  get("epochs_decay", c.epochs_decay);
  get("lr0", c.lr0);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("batch_size", c.batch_size);
  get("image_load_size", c.image_load_size);
  get("image_crop_size", c.image_crop_size);
  get("pool_capacity", c.pool_capacity);
  get("lambda_cycle", c.weights.lambda_cycle);
  get("lambda_identity", c.weights.lambda_identity);
  get("seed", c.seed);
  get("checkpoint_every", c.checkpoint_every);
  get("generator_filters", c.generator_filters);
  get("n_res_blocks", c.n_res_blocks);
  get("discriminator_filters", c.discriminator_filters);
  get("discriminator_layers", c.discriminator_layers);
  return c;
}

double learning_rate(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs()) {
    throw DomainError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(cfg.total_epochs()) + ")");
  }
  if (epoch < cfg.epochs_constant) return cfg.lr0;
  const double done = epoch - cfg.epochs_constant + 1;
  return cfg.lr0 * (1.0 - done / (cfg.epochs_decay + 1.0));
}

UnpairedSampler::UnpairedSampler(std::size_t size_a, std::size_t size_b) {
  if (size_a == 0 || size_b == 0) throw DomainError("both training domains must be non-empty");
  for (std::size_t i = 0; i < size_a; ++i) perm_[0].push_back(i);
  for (std::size_t i = 0; i < size_b; ++i) perm_[1].push_back(i);
  cursor_ = {size_a, size_b};
}

void UnpairedSampler::begin_epoch(Rng& rng) {
  for (int d = 0; d < 2; ++d) {
    shuffle(perm_[d], rng);
    cursor_[d] = 0;
  }
}

std::size_t UnpairedSampler::draw(int domain, Rng& rng) {
  if (perm_[domain].empty()) throw DomainError("sampler has an empty domain");
  if (cursor_[domain] >= perm_[domain].size()) {
    shuffle(perm_[domain], rng);
    cursor_[domain] = 0;
  }
  return perm_[domain][cursor_[domain]++];
}

std::pair<std::size_t, std::size_t> UnpairedSampler::next(Rng& rng) {
  const std::size_t a = draw(0, rng);
  const std::size_t b = draw(1, rng);
  return {a, b};
}

std::size_t UnpairedSampler::iterations_per_epoch(int batch_size) const {
  const std::size_t longest = std::max(perm_[0].size(), perm_[1].size());
  const auto b = static_cast<std::size_t>(batch_size);
  return (longest + b - 1) / b;
}

json UnpairedSampler::state() const {
  return {{"perm_a", perm_[0]}, {"perm_b", perm_[1]},
          {"cursor_a", cursor_[0]}, {"cursor_b", cursor_[1]}};
}

void UnpairedSampler::restore(const json& j) {
  try {
    std::array<std::vector<std::size_t>, 2> perm{j.at("perm_a").get<std::vector<std::size_t>>(),
                                                 j.at("perm_b").get<std::vector<std::size_t>>()};
    std::array<std::size_t, 2> cursor{j.at("cursor_a").get<std::size_t>(),
                                      j.at("cursor_b").get<std::size_t>()};
    for (int d = 0; d < 2; ++d) {
      std::set<std::size_t> seen(perm[d].begin(), perm[d].end());
      if (seen.size() != perm[d].size() || (!perm[d].empty() && *seen.rbegin() >= perm[d].size()))
        throw FormatError("sampler permutation is not a permutation");
      if (cursor[d] > perm[d].size()) throw FormatError("sampler cursor out of range");
    }
    perm_ = std::move(perm);
    cursor_ = cursor;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed sampler state: ") + e.what());
  }
}

nn::TensorImage<float> augment(const Raster& img, int load_size, int crop_size, Rng& rng,
                               bool allow_flip) {
  if (crop_size > load_size) throw DomainError("crop size exceeds load size");
  const Raster loaded = resize(img, load_size, load_size);
  const int span = load_size - crop_size + 1;
  const int top = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(span)));
  const int left = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(span)));
  const bool flip = allow_flip && coin_flip(rng);
  nn::TensorImage<float> t(3, crop_size, crop_size);
  for (int c = 0; c < 3; ++c) {
    const int src_c = loaded.channels == 1 ? 0 : c;
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x) {
        const int sx = left + (flip ? crop_size - 1 - x : x);
        t(c, y, x) = static_cast<float>(loaded.at(sx, top + y, src_c) / 127.5 - 1.0);
      }
  }
  return t;
}

bool MetricsRecord::same_losses(const MetricsRecord& o) const {
  const auto& g = generator;
  const auto& h = o.generator;
  return iteration == o.iteration && epoch == o.epoch && g.adversarial_g == h.adversarial_g &&
         g.adversarial_f == h.adversarial_f && g.cycle_a == h.cycle_a &&
         g.cycle_b == h.cycle_b && g.identity_g == h.identity_g &&
         g.identity_f == h.identity_f && discriminator_a == o.discriminator_a &&
         discriminator_b == o.discriminator_b && lr == o.lr;
}

bool MetricsRecord::operator==(const MetricsRecord& o) const {
  return same_losses(o) && wall_ms == o.wall_ms;
}

json to_json(const MetricsRecord& m) {
  const auto& g = m.generator;
  return {{"iteration", m.iteration},         {"epoch", m.epoch},
          {"adversarial_g", g.adversarial_g}, {"adversarial_f", g.adversarial_f},
          {"cycle_a", g.cycle_a},             {"cycle_b", g.cycle_b},
          {"identity_g", g.identity_g},       {"identity_f", g.identity_f},
          {"discriminator_a", m.discriminator_a}, {"discriminator_b", m.discriminator_b},
          {"lr", m.lr},                       {"wall_ms", m.wall_ms}};
}

MetricsRecord metrics_from_json(const json& j) {
  try {
    MetricsRecord m;
    m.iteration = j.at("iteration").get<std::int64_t>();
    m.epoch = j.at("epoch").get<int>();
    m.generator.adversarial_g = j.at("adversarial_g").get<double>();
    m.generator.adversarial_f = j.at("adversarial_f").get<double>();
    m.generator.cycle_a = j.at("cycle_a").get<double>();
    m.generator.cycle_b = j.at("cycle_b").get<double>();
    m.generator.identity_g = j.at("identity_g").get<double>();
    m.generator.identity_f = j.at("identity_f").get<double>();
    m.discriminator_a = j.at("discriminator_a").get<double>();
    m.discriminator_b = j.at("discriminator_b").get<double>();
    m.lr = j.at("lr").get<double>();
    m.wall_ms = j.at("wall_ms").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metrics record: ") + e.what());
  }
}

std::vector<MetricsRecord> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw FormatError("malformed metrics line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

TrainState init_train_state(const TrainConfig& cfg, std::size_t size_a, std::size_t size_b) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  const nn::ModelConfig model = cfg.model();
  s.params = nn::init_parameters<float>(model.generator, model.discriminator, cfg.seed);
  s.adam = nn::AdamState<float>(s.params);
  const auto capacity = static_cast<std::size_t>(cfg.pool_capacity);
  s.pool_a = nn::ImagePool<float>(capacity, mix_seed(cfg.seed, 0xA));
  s.pool_b = nn::ImagePool<float>(capacity, mix_seed(cfg.seed, 0xB));
  s.rng = make_rng(cfg.seed, 1);
  s.sampler = UnpairedSampler(size_a, size_b);
  return s;
}

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw TrainingError(term);
}

}  // namespace

MetricsRecord train_step(TrainState& state, const Batch& batch, double lr) {
  if (batch.a.empty() || batch.a.size() != batch.b.size())
    throw DomainError("batch needs the same positive number of images per domain");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be >= 0");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = batch.a.size();
  const float scale = 1.0f / static_cast<float>(n);
  const auto adam = state.config.adam();

  MetricsRecord rec;
  rec.iteration = state.iteration;
  rec.epoch = state.epoch;
  rec.lr = lr;

  auto grads = state.params.zeros_like();
  std::vector<nn::TensorImage<float>> fake_a(n), fake_b(n);
  auto& terms = rec.generator;
  for (std::size_t i = 0; i < n; ++i) {
    auto loss = nn::generator_total_loss(state.params, batch.a[i], batch.b[i],
                                         state.config.weights, &grads, scale);
    terms.adversarial_g += static_cast<double>(loss.terms.adversarial_g) / n;
    terms.adversarial_f += static_cast<double>(loss.terms.adversarial_f) / n;
    terms.cycle_a += static_cast<double>(loss.terms.cycle_a) / n;
    terms.cycle_b += static_cast<double>(loss.terms.cycle_b) / n;
    terms.identity_g += static_cast<double>(loss.terms.identity_g) / n;
    terms.identity_f += static_cast<double>(loss.terms.identity_f) / n;
    fake_a[i] = std::move(loss.fake_a);
    fake_b[i] = std::move(loss.fake_b);
  }
  require_finite(terms.adversarial_g, "adversarial_g");
  require_finite(terms.adversarial_f, "adversarial_f");
  require_finite(terms.cycle_a, "cycle_a");
  require_finite(terms.cycle_b, "cycle_b");
  require_finite(terms.identity_g, "identity_g");
  require_finite(terms.identity_f, "identity_f");
  if (!grads.all_finite()) throw TrainingError("generator_gradients");
  nn::adam_step(state.params, grads, state.adam, nn::ParamGroup::generators, lr, adam);

  // Discriminators see pre-update fakes, replayed through the pools.
  for (std::size_t i = 0; i < n; ++i) {
    const auto replay_b = state.pool_b.query(fake_b[i]);
    rec.discriminator_b += static_cast<double>(nn::discriminator_total_loss(
                               state.params, nn::Net::D_B, batch.b[i], replay_b, &grads, scale)) /
                           n;
    const auto replay_a = state.pool_a.query(fake_a[i]);
    rec.discriminator_a += static_cast<double>(nn::discriminator_total_loss(
                               state.params, nn::Net::D_A, batch.a[i], replay_a, &grads, scale)) /
                           n;
  }
  require_finite(rec.discriminator_a, "discriminator_a");
  require_finite(rec.discriminator_b, "discriminator_b");
  if (!grads.all_finite()) throw TrainingError("discriminator_gradients");
  nn::adam_step(state.params, grads, state.adam, nn::ParamGroup::d_a, lr, adam);
  nn::adam_step(state.params, grads, state.adam, nn::ParamGroup::d_b, lr, adam);

  ++state.iteration;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  return rec;
}

DomainImages load_train_images(const fs::path& root, const data::DatasetManifest& manifest) {
  DomainImages images;
  for (const auto& rel : manifest.files('A', "train")) images.a.push_back(load_raster(root / rel));
  for (const auto& rel : manifest.files('B', "train")) images.b.push_back(load_raster(root / rel));
  if (images.a.empty() || images.b.empty())
    throw DomainError("dataset has an empty training domain");
  return images;
}

Batch sample_unpaired_batch(TrainState& state, const DomainImages& images) {
  if (images.a.empty() || images.b.empty()) throw DomainError("empty training domain");
  if (state.sampler.size(0) != images.a.size() || state.sampler.size(1) != images.b.size())
    throw DomainError("sampler sizes do not match the loaded domains");
  const auto& cfg = state.config;
  Batch batch;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto [ia, ib] = state.sampler.next(state.rng);
    batch.a.push_back(augment(images.a[ia], cfg.image_load_size, cfg.image_crop_size, state.rng));
    batch.b.push_back(augment(images.b[ib], cfg.image_load_size, cfg.image_crop_size, state.rng));
  }
  return batch;
}

std::vector<nn::TensorImage<float>> fixed_sample_sketches(const fs::path& root,
                                                          const data::DatasetManifest& manifest,
                                                          int crop_size, int count) {
  auto files = manifest.files('A', "test");
  if (files.empty()) files = manifest.files('A', "train");
  std::vector<nn::TensorImage<float>> out;
  for (const auto& rel : files) {
    if (static_cast<int>(out.size()) >= count) break;
    out.push_back(nn::to_tensor<float>(resize(load_raster(root / rel), crop_size, crop_size)));
  }
  return out;
}

std::vector<fs::path> sample_outputs(const nn::ParameterSet<float>& params,
                                     const std::vector<nn::TensorImage<float>>& sketches,
                                     const fs::path& out_dir) {
  if (sketches.empty()) throw DomainError("sample_outputs needs at least one sketch");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < sketches.size(); ++i) {
    const auto painting = nn::generator_forward(params, nn::Net::G, sketches[i]);
    const auto back = nn::generator_forward(params, nn::Net::F, painting);
    const Raster parts[] = {nn::to_raster(sketches[i]), nn::to_raster(painting),
                            nn::to_raster(back)};
    const fs::path path = out_dir / ("sample_" + std::to_string(i) + ".png");
    save_png(path, hconcat(parts));
    written.push_back(path);
  }
  return written;
}

namespace {

// Keeps records up to `iteration` (exclusive) so a resumed run does not
// duplicate lines written after its checkpoint.
void truncate_metrics(const fs::path& path, std::int64_t iteration) {
  if (!fs::exists(path)) return;
  std::vector<MetricsRecord> kept;
  for (const auto& m : read_metrics(path))
    if (m.iteration < iteration) kept.push_back(m);
  std::ofstream out(path, std::ios::trunc);
  for (const auto& m : kept) out << to_json(m).dump() << '\n';
  if (!out) throw IoError("cannot rewrite " + path.string());
}

}  // namespace

TrainResult train(const fs::path& dataset_root, const TrainConfig& cfg, const fs::path& out_dir,
                  const TrainOptions& options) {
  cfg.validate();
  const data::DatasetManifest manifest = data::load_manifest(dataset_root);
  const DomainImages images = load_train_images(dataset_root, manifest);

  TrainResult result;
  TrainState& state = result.state;
  if (options.resume_from) {
    state = ckpt::load_checkpoint(*options.resume_from);
    if (!(state.config.model() == cfg.model()) || state.config.seed != cfg.seed)
      throw DomainError("checkpoint was trained with a different model or seed");
    if (state.sampler.size(0) != images.a.size() || state.sampler.size(1) != images.b.size())
      throw DomainError("checkpoint was trained on a dataset of a different size");
    if (state.epoch > cfg.total_epochs())
      throw DomainError("checkpoint is past the configured number of epochs");
    state.config = cfg;
  } else {
    state = init_train_state(cfg, images.a.size(), images.b.size());
  }

  const fs::path ckpt_dir = out_dir / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  if (ec) throw IoError("cannot create " + ckpt_dir.string() + ": " + ec.message());
  const fs::path metrics_path = out_dir / "metrics.jsonl";
  if (options.resume_from) {
    truncate_metrics(metrics_path, state.iteration);
  } else {
    std::ofstream(metrics_path, std::ios::trunc);
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());

  const auto sketches =
      fixed_sample_sketches(dataset_root, manifest, cfg.image_crop_size, options.sample_count);
  const int last =
      std::min(cfg.total_epochs(), options.stop_after_epoch.value_or(cfg.total_epochs()));
  const std::size_t iterations = state.sampler.iterations_per_epoch(cfg.batch_size);

  result.final_checkpoint = ckpt_dir / "latest.ckpt";
  for (int epoch = state.epoch; epoch < last; ++epoch) {
    const double lr = learning_rate(epoch, cfg);
    state.sampler.begin_epoch(state.rng);
    for (std::size_t it = 0; it < iterations; ++it) {
      const Batch batch = sample_unpaired_batch(state, images);
      const MetricsRecord rec = train_step(state, batch, lr);
      metrics << to_json(rec).dump() << '\n';
      metrics.flush();
      if (!metrics) throw IoError("cannot write " + metrics_path.string());
      result.metrics.push_back(rec);
      if (options.on_iteration) options.on_iteration(rec);
    }
    state.epoch = epoch + 1;
    if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == last) {
      const std::string tag = "epoch_" + std::to_string(state.epoch);
      const fs::path path = ckpt_dir / (tag + ".ckpt");
      ckpt::save_checkpoint(state, path);
      ckpt::save_checkpoint(state, result.final_checkpoint);
      if (!sketches.empty()) sample_outputs(state.params, sketches, out_dir / "samples" / tag);
    }
  }
  return result;
}

}  // namespace shanshui::train
