// Command-line entry point: dataset, train, translate, serve, export.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
// Every subcommand accepts --config <file.json>, a flat object whose keys
// are long flag names without the leading dashes ("lr", "epochs-constant").
// Flags given on the command line win over the file, which wins over the
// built-in defaults.

#include <csignal>
#include <iostream>
#include <memory>
#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "shanshui/canny.hpp"
#include "shanshui/checkpoint.hpp"
#include "shanshui/dataset.hpp"
#include "shanshui/errors.hpp"
#include "shanshui/raster.hpp"
#include "shanshui/service.hpp"
#include "shanshui/trainer.hpp"

namespace fs = std::filesystem;
using namespace shanshui;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

// Reads the JSON config and attaches every key to the selected subcommand.
class JsonConfig final : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const auto results = opt->results();
      if (!results.empty()) j[opt->get_lnames().front()] = results.back();
      else if (default_also) j[opt->get_lnames().front()] = opt->get_default_str();
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    for (const CLI::App* sub : root_->get_subcommands()) parents.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_object() || value.is_array() || value.is_null())
        throw CLI::ConversionError("config key '" + key + "' must be a scalar");
      item.inputs = {value.is_string() ? value.get<std::string>() : value.dump()};
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;
};

struct DatasetArgs {
  fs::path scan_dir, out_dir;
  data::DatasetConfig cfg;
  std::string crop_mode = "fraction";
  double crop = 0.05;
};

struct TrainArgs {
  fs::path dataset_dir, out_dir, resume;
  train::TrainConfig cfg;
  int samples = 3;
  int log_every = 50;
};

struct TranslateArgs {
  fs::path checkpoint, input, output;
  int size = 256;
};

struct ExportArgs {
  fs::path gallery, out_dir;
};

void add_dataset(CLI::App& app, DatasetArgs& a) {
  auto* sub = app.add_subcommand("dataset", "Build the two-domain sketch/painting dataset from scans");
  sub->add_option("--scan-dir", a.scan_dir, "Flat directory of PNG/JPEG painting scans")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub->add_option("--out-dir", a.out_dir, "Output dataset root")->required();
  sub->add_option("--size", a.cfg.size, "Square output side in pixels")->check(CLI::PositiveNumber);
  sub->add_option("--crop", a.crop, "Border trimmed from every side, fraction or pixels");
  sub->add_option("--crop-mode", a.crop_mode, "How --crop is read")
      ->check(CLI::IsMember({"fraction", "pixels"}));
  sub->add_option("--sigma", a.cfg.canny.sigma, "Canny Gaussian sigma");
  sub->add_option("--radius", a.cfg.canny.radius, "Canny Gaussian kernel radius");
  sub->add_option("--low-threshold", a.cfg.canny.low_threshold, "Canny weak-edge threshold");
  sub->add_option("--high-threshold", a.cfg.canny.high_threshold, "Canny strong-edge threshold");
  sub->add_option("--train-fraction", a.cfg.train_fraction, "Share of scans in the train split")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--seed", a.cfg.seed, "Split seed");
}

int run_dataset(DatasetArgs& a) {
  a.cfg.crop = data::CropSpec::fractions(a.crop);
  if (a.crop_mode == "pixels") a.cfg.crop.mode = data::CropSpec::Mode::pixels;
  try {
    a.cfg.canny.validate();
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  const auto manifest = data::build_dataset(a.scan_dir, a.out_dir, a.cfg);
  std::cout << (a.out_dir / "manifest.json").string() << '\n';
  std::cerr << manifest.domain_a.size() << " pairs written\n";
  return kOk;
}

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train the two-generator translation model");
  auto& c = a.cfg;
  sub->add_option("--dataset-dir", a.dataset_dir, "Dataset root holding manifest.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub->add_option("--out-dir", a.out_dir, "Run directory for checkpoints, metrics and samples")
      ->required();
  sub->add_option("--resume", a.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  sub->add_option("--epochs-constant", c.epochs_constant, "Epochs at the initial learning rate");
  sub->add_option("--epochs-decay", c.epochs_decay, "Epochs of linear decay to zero");
  sub->add_option("--lr", c.lr0, "Initial learning rate");
  sub->add_option("--beta1", c.adam_beta1, "Adam first-moment decay");
  sub->add_option("--beta2", c.adam_beta2, "Adam second-moment decay");
  sub->add_option("--batch-size", c.batch_size, "Images per domain per step");
  sub->add_option("--load-size", c.image_load_size, "Resize side before cropping");
  sub->add_option("--crop-size", c.image_crop_size, "Random crop side fed to the networks");
  sub->add_option("--pool-size", c.pool_capacity, "Fake-image history per discriminator");
  sub->add_option("--lambda-cycle", c.weights.lambda_cycle, "Cycle-consistency weight");
  sub->add_option("--lambda-identity", c.weights.lambda_identity,
                  "Identity weight as a fraction of --lambda-cycle");
  sub->add_option("--seed", c.seed, "Training seed");
  sub->add_option("--checkpoint-every", c.checkpoint_every, "Epochs between checkpoints");
  sub->add_option("--generator-filters", c.generator_filters, "Generator base filter count");
  sub->add_option("--res-blocks", c.n_res_blocks, "Residual blocks, 0 picks by crop size");
  sub->add_option("--discriminator-filters", c.discriminator_filters,
                  "Discriminator base filter count");
  sub->add_option("--discriminator-layers", c.discriminator_layers,
                  "Strided discriminator layers");
  sub->add_option("--samples", a.samples, "Sample translations written per checkpoint");
  sub->add_option("--log-every", a.log_every, "Iterations between progress lines, 0 silences");
}

int run_train(const TrainArgs& a) {
  try {
    a.cfg.validate();
    if (a.samples < 0) throw DomainError("samples must be >= 0");
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  train::TrainOptions options;
  options.sample_count = a.samples;
  if (!a.resume.empty()) options.resume_from = a.resume;
  const int every = a.log_every;
  options.on_iteration = [every](const train::MetricsRecord& m) {
    if (every <= 0 || m.iteration % every != 0) return;
    std::cerr << "epoch " << m.epoch << " iter " << m.iteration << " lr " << m.lr
              << " G " << m.generator.total() << " D_A " << m.discriminator_a << " D_B "
              << m.discriminator_b << '\n';
  };
  const auto result = train::train(a.dataset_dir, a.cfg, a.out_dir, options);
  std::cout << result.final_checkpoint.string() << '\n';
  return kOk;
}

void add_translate(CLI::App& app, TranslateArgs& a) {
  auto* sub = app.add_subcommand("translate", "Translate one sketch PNG offline");
  sub->add_option("--checkpoint", a.checkpoint, "Trained or identity checkpoint")->required();
  sub->add_option("--input", a.input, "Sketch PNG")->required();
  sub->add_option("--output", a.output, "Painting PNG to write")->required();
  sub->add_option("--size", a.size, "Model input side in pixels");
}

int run_translate(const TranslateArgs& a) {
  if (a.size < 32 || a.size % 4 != 0) {
    std::cerr << "error: --size must be a multiple of 4 and >= 32\n";
    return kUsage;
  }
  std::unique_ptr<service::Translator> model;
  try {
    model = service::make_translator(ckpt::load_inference_model(a.checkpoint));
  } catch (const std::exception& e) {
    std::cerr << "error: cannot load checkpoint: " << e.what() << '\n';
    return kRuntime;
  }
  nn::TensorImage<float> sketch;
  try {
    sketch = service::preprocess_sketch(read_file(a.input), a.size);
  } catch (const std::exception& e) {
    std::cerr << "error: bad input: " << e.what() << '\n';
    return kUsage;
  }
  save_png(a.output, service::translate(*model, sketch));
  std::cout << a.output.string() << '\n';
  return kOk;
}

void add_serve(CLI::App& app, service::ServiceConfig& c) {
  auto* sub = app.add_subcommand("serve", "Run the HTTP generation service");
  sub->add_option("--checkpoint", c.checkpoint, "Checkpoint to serve")->required();
  sub->add_option("--host", c.host, "Listen address");
  sub->add_option("--port", c.port, "Listen port, 0 picks a free one");
  sub->add_option("--input-size", c.input_size, "Model input side in pixels");
  sub->add_option("--queue-capacity", c.queue_capacity, "Waiting plus running generations");
  sub->add_option("--gallery-dir", c.gallery_dir, "Gallery storage directory");
  sub->add_option("--static-dir", c.static_dir, "Built drawing client served at /");
  sub->add_option("--threads", c.http_threads, "HTTP worker threads");
}

int run_serve(const service::ServiceConfig& cfg) {
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  // Blocked before any thread starts so only sigwait below sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGTERM);
  sigaddset(&signals, SIGINT);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::unique_ptr<service::Service> svc;
  try {
    svc = std::make_unique<service::Service>(cfg, service::load_model(cfg));
    const int port = svc->start();
    std::cout << "listening on http://" << cfg.host << ":" << port << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "signal " << sig << ", shutting down\n";
  svc->stop();
  return kOk;
}

void add_export(CLI::App& app, ExportArgs& a) {
  auto* sub = app.add_subcommand("export", "Export the gallery as side-by-side pairs");
  sub->add_option("--gallery-dir", a.gallery, "Gallery directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  sub->add_option("--out-dir", a.out_dir, "Export directory")->required();
}

int run_export(const ExportArgs& a) {
  const auto n = service::export_collection(a.gallery, a.out_dir);
  std::cout << n << " pairs written to " << a.out_dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Sketch-to-painting translation: dataset, training and serving");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "JSON file of flag values, overridden by explicit flags");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  bool print_config = false;
  app.add_flag("--print-config", print_config,
               "Print the subcommand's effective flag values as JSON and exit");

  DatasetArgs dataset;
  TrainArgs train_args;
  TranslateArgs translate;
  service::ServiceConfig serve;
  ExportArgs export_args;
  add_dataset(app, dataset);
  add_train(app, train_args);
  add_translate(app, translate);
  add_serve(app, serve);
  add_export(app, export_args);
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  if (print_config) {
    std::cout << app.get_subcommands().front()->config_to_str(true, false) << '\n';
    return kOk;
  }

  try {
    if (app.got_subcommand("dataset")) return run_dataset(dataset);
    if (app.got_subcommand("train")) return run_train(train_args);
    if (app.got_subcommand("translate")) return run_translate(translate);
    if (app.got_subcommand("serve")) return run_serve(serve);
    if (app.got_subcommand("export")) return run_export(export_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
