#include <fstream>
#include <map>

#include "doctest.h"
#include "shanshui/checkpoint.hpp"
#include "shanshui/convert.hpp"
#include "shanshui/trainer.hpp"
#include "test_support.hpp"
#include "toy_dataset.hpp"

using namespace shanshui;
using namespace shanshui::train;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(int epochs = 2) {
  TrainConfig c;
  c.epochs_constant = epochs;
  c.epochs_decay = 0;
  c.image_load_size = 36;
  c.image_crop_size = 32;
  c.generator_filters = 8;
  c.n_res_blocks = 1;
  c.discriminator_filters = 8;
  c.discriminator_layers = 2;
  c.pool_capacity = 3;
  c.seed = 5;
  c.checkpoint_every = 1;
  return c;
}

Batch random_batch(int n, int side, Rng& rng) {
  Batch b;
  for (int i = 0; i < n; ++i) {
    b.a.push_back(testing::random_image<float>(side, side, rng));
    b.b.push_back(testing::random_image<float>(side, side, rng));
  }
  return b;
}

bool net_changed(const nn::ParameterSet<float>& before, const nn::ParameterSet<float>& after,
                 nn::Net net) {
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before.spec(i).owner == net && before.value(i) != after.value(i)) return true;
  return false;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("learning_rate schedule") {
  TrainConfig cfg;
  CHECK(learning_rate(0, cfg) == 2e-4);
  CHECK(learning_rate(99, cfg) == 2e-4);
  CHECK(learning_rate(150, cfg) == doctest::Approx(2e-4 * (1.0 - 51.0 / 101.0)));
  CHECK(learning_rate(150, cfg) == doctest::Approx(9.90e-5).epsilon(1e-3));
  CHECK(learning_rate(199, cfg) == doctest::Approx(2e-4 / 101.0));
  CHECK_THROWS_AS(learning_rate(200, cfg), DomainError);
  CHECK_THROWS_AS(learning_rate(-1, cfg), DomainError);
  double prev = learning_rate(0, cfg);
  for (int e = 1; e < cfg.total_epochs(); ++e) {
    const double lr = learning_rate(e, cfg);
    CHECK(lr <= prev);
    CHECK(lr > 0.0);
    prev = lr;
  }
}

TEST_CASE("TrainConfig validation and JSON") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.model().generator.n_res_blocks == 9);
  cfg.image_crop_size = 128;
  CHECK(cfg.model().generator.n_res_blocks == 6);
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.lr0 = 0; }).validate(), DomainError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.epochs_constant = 0, c.epochs_decay = 0; }).validate(),
                  DomainError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.image_crop_size = 300; }).validate(), DomainError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.image_crop_size = 30; }).validate(), DomainError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), DomainError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.image_load_size = c.image_crop_size = 16; }).validate(),
                  DomainError);

  const TrainConfig t = tiny_config();
  const TrainConfig back = train_config_from_json(to_json(t));
  CHECK(to_json(back) == to_json(t));
  CHECK(train_config_from_json(nlohmann::json::object()).lr0 == 2e-4);
  CHECK_THROWS_AS(train_config_from_json({{"learning_rate", 1}}), DomainError);
  CHECK_THROWS_AS(train_config_from_json({{"lr0", "fast"}}), DomainError);
}

TEST_CASE("augment") {
  Rng rng = make_rng(1);
  const Raster img = testing::random_raster(20, 16, 3, rng);
  const auto plain = augment(img, 24, 24, rng, false);
  CHECK((plain.data.array() == nn::to_tensor<float>(resize(img, 24, 24)).data.array()).all());

  for (const int channels : {1, 3}) {
    const auto ones = augment(Raster(40, 30, channels, 255), 36, 32, rng);
    CHECK((ones.data.array() == 1.0f).all());
    const auto neg = augment(Raster(40, 30, channels, 0), 36, 32, rng);
    CHECK((neg.data.array() == -1.0f).all());
    CHECK(neg.channels == 3);
    CHECK(neg.height == 32);
  }

  // Every output is some window of the resized image, possibly mirrored.
  const Raster loaded = resize(img, 12, 12);
  const auto reference = nn::to_tensor<float>(loaded);
  int flips = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto out = augment(img, 12, 8, rng);
    bool matched = false;
    for (int top = 0; top <= 4 && !matched; ++top)
      for (int left = 0; left <= 4 && !matched; ++left)
        for (const bool flip : {false, true}) {
          bool ok = true;
          for (int c = 0; c < 3 && ok; ++c)
            for (int y = 0; y < 8 && ok; ++y)
              for (int x = 0; x < 8 && ok; ++x)
                ok = out(c, y, x) == reference(c, top + y, left + (flip ? 7 - x : x));
          if (ok) {
            matched = true;
            flips += flip;
            break;
          }
        }
    CHECK(matched);
  }
  CHECK(flips > 5);
  CHECK(flips < 35);
  CHECK_THROWS_AS(augment(img, 8, 12, rng), DomainError);
}

TEST_CASE("unpaired sampler") {
  Rng rng = make_rng(2);
  UnpairedSampler single(1, 1);
  single.begin_epoch(rng);
  for (int i = 0; i < 5; ++i) CHECK(single.next(rng) == std::pair<std::size_t, std::size_t>{0, 0});

  UnpairedSampler s(7, 3);
  CHECK(s.iterations_per_epoch(1) == 7);
  CHECK(s.iterations_per_epoch(2) == 4);
  for (int epoch = 0; epoch < 3; ++epoch) {
    s.begin_epoch(rng);
    std::map<std::size_t, int> seen_a, seen_b;
    for (int i = 0; i < 7; ++i) {
      const auto [a, b] = s.next(rng);
      ++seen_a[a];
      ++seen_b[b];
    }
    CHECK(seen_a.size() == 7);
    for (const auto& [k, n] : seen_a) CHECK(n == 1);
    CHECK(seen_b.size() == 3);
  }

  auto draws = [](std::uint64_t seed) {
    Rng r = make_rng(seed);
    UnpairedSampler u(5, 4);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (int e = 0; e < 3; ++e) {
      u.begin_epoch(r);
      for (int i = 0; i < 5; ++i) out.push_back(u.next(r));
    }
    return out;
  };
  CHECK(draws(3) == draws(3));
  CHECK(draws(3) != draws(4));

  UnpairedSampler restored;
  restored.restore(s.state());
  Rng r1 = rng, r2 = rng;
  for (int i = 0; i < 10; ++i) CHECK(s.next(r1) == restored.next(r2));

  CHECK_THROWS_AS(UnpairedSampler(0, 3), DomainError);
  CHECK_THROWS_AS(restored.restore({{"perm_a", {0, 0}}, {"perm_b", {0}}, {"cursor_a", 0},
                                    {"cursor_b", 0}}),
                  FormatError);
}

TEST_CASE("sample_unpaired_batch draws from a size-one dataset") {
  TrainConfig cfg = tiny_config();
  cfg.batch_size = 2;
  auto state = init_train_state(cfg, 1, 1);
  DomainImages images{{Raster(40, 40, 1, 255)}, {Raster(40, 40, 3, 0)}};
  state.sampler.begin_epoch(state.rng);
  const Batch b = sample_unpaired_batch(state, images);
  REQUIRE(b.a.size() == 2);
  CHECK((b.a[1].data.array() == 1.0f).all());
  CHECK((b.b[0].data.array() == -1.0f).all());
  DomainImages empty{{}, {Raster(8, 8, 3)}};
  CHECK_THROWS_AS(sample_unpaired_batch(state, empty), DomainError);
}

TEST_CASE("train_step updates every network") {
  auto state = init_train_state(tiny_config(), 2, 2);
  const auto before = state.params;
  Rng rng = make_rng(7);
  const auto rec = train_step(state, random_batch(1, 32, rng), 2e-4);
  for (const auto net : {nn::Net::G, nn::Net::F, nn::Net::D_A, nn::Net::D_B})
    CHECK(net_changed(before, state.params, net));
  CHECK(state.iteration == 1);
  CHECK(rec.iteration == 0);
  CHECK(rec.lr == 2e-4);
  CHECK(std::isfinite(rec.generator.total()));
  CHECK(rec.discriminator_a > 0);
  CHECK(state.adam.steps == std::array<std::int64_t, 3>{1, 1, 1});
  CHECK(state.pool_a.stored().size() == 1);
}

TEST_CASE("train_step with zero learning rate leaves parameters unchanged") {
  auto state = init_train_state(tiny_config(), 2, 2);
  const auto before = state.params;
  Rng rng = make_rng(8);
  const auto rec = train_step(state, random_batch(2, 32, rng), 0.0);
  CHECK(state.params == before);
  CHECK(rec.generator.cycle_a > 0);
  CHECK(std::isfinite(rec.discriminator_b));
}

TEST_CASE("train_step is deterministic") {
  auto run = [] {
    auto state = init_train_state(tiny_config(), 2, 2);
    Rng rng = make_rng(9);
    std::vector<MetricsRecord> out;
    for (int i = 0; i < 3; ++i) out.push_back(train_step(state, random_batch(1, 32, rng), 1e-3));
    return std::make_pair(out, state.params);
  };
  const auto [m1, p1] = run();
  const auto [m2, p2] = run();
  REQUIRE(m1.size() == m2.size());
  for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i].same_losses(m2[i]));
  CHECK(p1 == p2);
}

TEST_CASE("train_step surfaces non-finite terms by name") {
  auto state = init_train_state(tiny_config(), 2, 2);
  Rng rng = make_rng(10);
  state.params.value("D_B.head.conv.bias").setConstant(std::numeric_limits<float>::infinity());
  const auto before = state.params;
  try {
    train_step(state, random_batch(1, 32, rng), 2e-4);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.term() == "adversarial_g");
    CHECK(std::string(e.what()).find("adversarial_g") != std::string::npos);
  }
  CHECK(state.iteration == 0);

  auto other = init_train_state(tiny_config(), 2, 2);
  other.params.value("F.out.conv.bias").setConstant(std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(train_step(other, random_batch(1, 32, rng), 2e-4), TrainingError);
}

TEST_CASE("sample_outputs writes triptychs") {
  TempDir tmp;
  const auto params = nn::init_parameters<float>({8, 1}, {8, 2}, 3);
  Rng rng = make_rng(11);
  std::vector<nn::TensorImage<float>> sketches;
  for (int i = 0; i < 3; ++i) sketches.push_back(testing::random_image<float>(32, 32, rng));
  const auto files = sample_outputs(params, sketches, tmp / "epoch_1");
  REQUIRE(files.size() == 3);
  for (const auto& f : files) {
    const Raster r = load_raster(f);
    CHECK(r.width == 96);
    CHECK(r.height == 32);
  }
  // The left panel is the sketch itself after denormalization.
  CHECK(load_raster(files[0]).at(5, 7, 1) == nn::to_raster(sketches[0]).at(5, 7, 1));
  CHECK_THROWS_AS(sample_outputs(params, {}, tmp / "x"), DomainError);

  nn::TensorImage<float> extremes(3, 1, 2);
  extremes.data.col(0).setConstant(-1.0f);
  extremes.data.col(1).setConstant(1.0f);
  const Raster r = nn::to_raster(extremes);
  CHECK(r.at(0, 0, 0) == 0);
  CHECK(r.at(1, 0, 2) == 255);
  CHECK(nn::to_raster(nn::TensorImage<float>::constant(3, 1, 1, 0.0f)).at(0, 0) == 128);
  CHECK(nn::to_raster(nn::TensorImage<float>::constant(3, 1, 1, 7.0f)).at(0, 0) == 255);
}

TEST_CASE("train runs a toy configuration end to end") {
  TempDir tmp;
  testing::write_toy_dataset(tmp / "data", 4, 64, 1);
  TrainConfig cfg = tiny_config(2);
  cfg.image_load_size = 64;
  cfg.image_crop_size = 64;
  cfg.discriminator_layers = 3;
  const auto result = train::train(tmp / "data", cfg, tmp / "run");
  CHECK(result.metrics.size() == 8);
  CHECK(read_metrics(tmp / "run" / "metrics.jsonl").size() == 8);
  for (const auto& m : result.metrics) CHECK(std::isfinite(m.generator.total()));
  CHECK(fs::exists(tmp / "run" / "checkpoints" / "epoch_1.ckpt"));
  CHECK(fs::exists(tmp / "run" / "checkpoints" / "epoch_2.ckpt"));
  CHECK(bytes_of(tmp / "run" / "checkpoints" / "epoch_2.ckpt") ==
        bytes_of(result.final_checkpoint));
  const auto loaded = ckpt::load_checkpoint(result.final_checkpoint);
  CHECK(loaded.epoch == 2);
  CHECK(loaded.iteration == 8);
  CHECK(loaded.params == result.state.params);
  for (int i = 0; i < 3; ++i) {
    const auto sample = tmp / "run" / "samples" / "epoch_2" / ("sample_" + std::to_string(i) + ".png");
    REQUIRE(fs::exists(sample));
    CHECK(load_raster(sample).width == 3 * 64);
  }
}

TEST_CASE("metrics count is epochs times iterations per epoch") {
  TempDir tmp;
  testing::write_toy_dataset(tmp / "data", 5, 32, 2, 3);
  TrainConfig cfg = tiny_config(2);
  cfg.batch_size = 2;
  const auto result = train::train(tmp / "data", cfg, tmp / "run");
  CHECK(result.metrics.size() == 2 * 3);
  CHECK(result.metrics.back().iteration == 5);
  CHECK(result.metrics.back().epoch == 1);
}

TEST_CASE("training is deterministic and resumable") {
  TempDir tmp;
  testing::write_toy_dataset(tmp / "data", 3, 32, 3, 4);
  TrainConfig cfg = tiny_config();
  cfg.epochs_constant = 2;
  cfg.epochs_decay = 2;
  cfg.checkpoint_every = 2;

  const auto full = train::train(tmp / "data", cfg, tmp / "full");
  const auto again = train::train(tmp / "data", cfg, tmp / "again");
  REQUIRE(full.metrics.size() == 16);
  REQUIRE(again.metrics.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(full.metrics[i].same_losses(again.metrics[i]));
  CHECK(bytes_of(full.final_checkpoint) == bytes_of(again.final_checkpoint));

  TrainOptions stop;
  stop.stop_after_epoch = 2;
  const auto first = train::train(tmp / "data", cfg, tmp / "split", stop);
  CHECK(first.metrics.size() == 8);
  TrainOptions resume;
  resume.resume_from = tmp / "split" / "checkpoints" / "epoch_2.ckpt";
  const auto second = train::train(tmp / "data", cfg, tmp / "split", resume);
  REQUIRE(second.metrics.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(second.metrics[i].same_losses(full.metrics[8 + i]));
  CHECK(bytes_of(second.final_checkpoint) == bytes_of(full.final_checkpoint));
  const auto logged = read_metrics(tmp / "split" / "metrics.jsonl");
  REQUIRE(logged.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(logged[i].same_losses(full.metrics[i]));

  TrainConfig other = cfg;
  other.seed = 99;
  CHECK_THROWS_AS(train::train(tmp / "data", other, tmp / "bad", resume), DomainError);
}

TEST_CASE("train error contract") {
  TempDir tmp;
  CHECK_THROWS_AS(train::train(tmp / "missing", tiny_config(), tmp / "run"), IoError);
  testing::write_toy_dataset(tmp / "data", 2, 32, 4);
  std::ofstream(tmp / "blocker") << "x";
  CHECK_THROWS_AS(train::train(tmp / "data", tiny_config(), tmp / "blocker"), IoError);
  TrainConfig bad = tiny_config();
  bad.lr0 = -1;
  CHECK_THROWS_AS(train::train(tmp / "data", bad, tmp / "run"), DomainError);
}
