#pragma once

// HTTP inference service: one model worker behind a bounded queue, and a
// filesystem gallery of generation records.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "shanshui/checkpoint.hpp"
#include "shanshui/raster.hpp"
#include "shanshui/tensor.hpp"

namespace httplib {
class Server;
}

namespace shanshui::service {

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  int input_size = 256;
  int queue_capacity = 8;
  std::filesystem::path gallery_dir = "gallery";
  std::filesystem::path static_dir;  // empty: no static serving
  int http_threads = 64;

  void validate() const;
};

// Maps onto an HTTP status and the error body {"error": {"code", "message"}}.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

nlohmann::json error_body(const std::string& code, const std::string& message);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws RequestError(400) on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(const std::string& text);

// PNG bytes -> [-1, 1] tensor of size x size: alpha over white, gray
// replicated to RGB, bilinear resize. Undecodable or smaller than 32x32
// inputs raise RequestError(400).
nn::TensorImage<float> preprocess_sketch(std::span<const std::uint8_t> png, int size);

// A loaded generator. Calls are serialized by the service.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual nn::TensorImage<float> forward(const nn::TensorImage<float>& sketch) = 0;
  virtual std::string checkpoint_id() const = 0;
};

std::unique_ptr<Translator> make_translator(ckpt::InferenceModel model);

// Reads and validates the checkpoint. Throws IoError or FormatError.
std::unique_ptr<Translator> load_model(const ServiceConfig& cfg);

// Forward pass then denormalization. Non-finite output raises
// RequestError(500, "model_fault").
Raster translate(Translator& model, const nn::TensorImage<float>& sketch);

std::string hex_id(std::uint64_t id);

struct GenerationRecord {
  std::string id;
  std::string created_at;
  std::string sketch;    // relative to the gallery dir
  std::string painting;  // relative to the gallery dir
  std::string checkpoint_id;
  double latency_ms = 0;
};

nlohmann::json to_json(const GenerationRecord& r);
GenerationRecord record_from_json(const nlohmann::json& j);

struct GalleryPage {
  int page = 1;
  int page_size = 20;
  int total = 0;
  std::vector<GenerationRecord> records;
};

// Records live in <dir>/index.json, newest first. The image files are
// written before the index, and the index is replaced by rename, so an
// indexed record always has both files.
class Gallery {
 public:
  explicit Gallery(std::filesystem::path dir);

  GenerationRecord add(const Raster& sketch, const Raster& painting,
                       const std::string& checkpoint_id, double latency_ms);
  GalleryPage page(int page, int page_size) const;
  std::optional<GenerationRecord> find(const std::string& id) const;
  std::vector<GenerationRecord> records() const;
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void write_index() const;
  std::string fresh_id();

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::vector<GenerationRecord> records_;
  std::uint64_t counter_ = 0;
};

// Reads <gallery>/index.json without creating anything.
std::vector<GenerationRecord> read_gallery_index(const std::filesystem::path& gallery_dir);

// Writes pair_<k>.png (sketch | painting) for every record, newest first as
// k = 0, 1, ..., plus index.json. Empty gallery raises DomainError.
std::size_t export_collection(const std::filesystem::path& gallery_dir,
                              const std::filesystem::path& out_dir);

// Single consumer of translation jobs. depth() counts waiting plus running.
class ModelWorker {
 public:
  ModelWorker(std::unique_ptr<Translator> model, int capacity);
  ~ModelWorker();

  // nullopt when depth() has reached capacity.
  std::optional<std::future<Raster>> submit(nn::TensorImage<float> sketch);
  int depth() const { return depth_.load(); }
  Translator& model() { return *model_; }

  // Lets running and queued jobs finish, then joins.
  void shutdown();

 private:
  struct Job {
    nn::TensorImage<float> sketch;
    std::promise<Raster> result;
  };
  void run();

  std::unique_ptr<Translator> model_;
  int capacity_;
  std::atomic<int> depth_{0};
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  bool stopping_ = false;
  std::thread thread_;
};

class Service {
 public:
  Service(ServiceConfig cfg, std::unique_ptr<Translator> model);
  ~Service();

  // Binds and starts serving on a background thread; warm-up runs
  // asynchronously. Returns the bound port. Throws IoError when binding fails.
  int start();
  // Stops accepting, finishes in-flight requests, then stops the worker.
  void stop();

  bool ready() const { return warm_state_.load() == kWarm; }
  // Blocks until warm-up finishes. Throws RequestError when it failed.
  void wait_ready() const;
  int port() const { return port_; }
  Gallery& gallery() { return gallery_; }

 private:
  void install_routes();
  nlohmann::json handle_generate(std::vector<std::uint8_t> png);

  ServiceConfig cfg_;
  std::string checkpoint_id_;
  ModelWorker worker_;
  Gallery gallery_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  std::thread warmup_;
  static constexpr int kPending = 0, kWarm = 1, kFailed = 2;
  std::atomic<int> warm_state_{kPending};
  std::string warmup_error_;
  bool stopped_ = false;
  int port_ = 0;
};

}  // namespace shanshui::service
