#include "shanshui/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "shanshui/convert.hpp"
#include "shanshui/dataset.hpp"
#include "shanshui/errors.hpp"
#include "shanshui/networks.hpp"

// The default backlog of 5 drops connections when a canvas session bursts.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
// After Eigen: the resolver headers it pulls in define a macro named _res.
#include "httplib.h"

namespace shanshui::service {

namespace fs = std::filesystem;
using nlohmann::json;

void ServiceConfig::validate() const {
  if (queue_capacity < 1) throw DomainError("queue capacity must be >= 1");
  if (input_size < 32 || input_size % 4 != 0)
    throw DomainError("input size must be a multiple of 4 and >= 32");
  if (port < 0 || port > 65535) throw DomainError("port must be in [0, 65535]");
  if (http_threads < 1) throw DomainError("http threads must be >= 1");
  if (gallery_dir.empty()) throw DomainError("gallery dir must be set");
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int sextet(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  bool padded = false;
  for (char c : text) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    if (c == '=') {
      padded = true;
      continue;
    }
    const int v = sextet(c);
    if (v < 0 || padded) throw RequestError(400, "invalid_base64", "sketch_base64 is not valid base64");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

nn::TensorImage<float> preprocess_sketch(std::span<const std::uint8_t> png, int size) {
  Raster img;
  try {
    img = decode_png(png);
  } catch (const FormatError& e) {
    throw RequestError(400, "invalid_image", std::string("sketch is not a decodable PNG: ") + e.what());
  }
  if (img.width < 32 || img.height < 32) {
    throw RequestError(400, "image_too_small",
                       "sketch is " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + ", minimum is 32x32");
  }
  return nn::to_tensor<float>(resize(to_rgb(img), size, size));
}

namespace {

class IdentityTranslator final : public Translator {
 public:
  explicit IdentityTranslator(std::string id) : id_(std::move(id)) {}
  nn::TensorImage<float> forward(const nn::TensorImage<float>& sketch) override { return sketch; }
  std::string checkpoint_id() const override { return id_; }

 private:
  std::string id_;
};

class GeneratorTranslator final : public Translator {
 public:
  GeneratorTranslator(nn::ParameterSet<float> params, std::string id)
      : params_(std::move(params)), id_(std::move(id)) {}
  nn::TensorImage<float> forward(const nn::TensorImage<float>& sketch) override {
    return nn::generator_forward(params_, nn::Net::G, sketch);
  }
  std::string checkpoint_id() const override { return id_; }

 private:
  nn::ParameterSet<float> params_;
  std::string id_;
};

}  // namespace

std::string hex_id(std::uint64_t id) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id));
  return buf;
}

std::unique_ptr<Translator> make_translator(ckpt::InferenceModel model) {
  if (model.kind == "identity") return std::make_unique<IdentityTranslator>(hex_id(model.id));
  return std::make_unique<GeneratorTranslator>(std::move(model.params), hex_id(model.id));
}

std::unique_ptr<Translator> load_model(const ServiceConfig& cfg) {
  if (!fs::exists(cfg.checkpoint)) throw IoError("checkpoint not found: " + cfg.checkpoint.string());
  return make_translator(ckpt::load_inference_model(cfg.checkpoint));
}

Raster translate(Translator& model, const nn::TensorImage<float>& sketch) {
  const auto out = model.forward(sketch);
  if (!out.data.allFinite()) throw RequestError(500, "model_fault", "model produced non-finite output");
  return nn::to_raster(out);
}

// ---------------------------------------------------------------- gallery

json to_json(const GenerationRecord& r) {
  return {{"id", r.id},
          {"created_at", r.created_at},
          {"sketch", r.sketch},
          {"painting", r.painting},
          {"checkpoint_id", r.checkpoint_id},
          {"latency_ms", r.latency_ms}};
}

GenerationRecord record_from_json(const json& j) {
  try {
    GenerationRecord r;
    r.id = j.at("id").get<std::string>();
    r.created_at = j.at("created_at").get<std::string>();
    r.sketch = j.at("sketch").get<std::string>();
    r.painting = j.at("painting").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.latency_ms = j.at("latency_ms").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad gallery record: ") + e.what());
  }
}

std::vector<GenerationRecord> read_gallery_index(const fs::path& gallery_dir) {
  const fs::path index = gallery_dir / "index.json";
  if (!fs::exists(index)) return {};
  const auto bytes = read_file(index);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("bad gallery index " + index.string() + ": " + e.what());
  }
  if (!j.contains("records") || !j["records"].is_array())
    throw FormatError("gallery index has no records array: " + index.string());
  std::vector<GenerationRecord> out;
  for (const auto& r : j["records"]) out.push_back(record_from_json(r));
  return out;
}

Gallery::Gallery(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "sketches");
  fs::create_directories(dir_ / "paintings");
  records_ = read_gallery_index(dir_);
}

void Gallery::write_index() const {
  json list = json::array();
  for (const auto& r : records_) list.push_back(to_json(r));
  const std::string text = json{{"records", list}}.dump(2) + "\n";
  const fs::path tmp = dir_ / "index.json.tmp";
  write_file(tmp, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  fs::rename(tmp, dir_ / "index.json");
}

std::string Gallery::fresh_id() {
  using namespace std::chrono;
  const auto ms = duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  for (;;) {
    const std::string id =
        hex_id((static_cast<std::uint64_t>(ms) << 16) | (counter_++ & 0xFFFF));
    const bool taken = std::any_of(records_.begin(), records_.end(),
                                   [&](const GenerationRecord& r) { return r.id == id; });
    if (!taken) return id;
  }
}

GenerationRecord Gallery::add(const Raster& sketch, const Raster& painting,
                              const std::string& checkpoint_id, double latency_ms) {
  std::lock_guard lock(mu_);
  GenerationRecord r;
  r.id = fresh_id();
  r.created_at = data::iso8601(std::chrono::system_clock::now());
  r.sketch = "sketches/" + r.id + ".png";
  r.painting = "paintings/" + r.id + ".png";
  r.checkpoint_id = checkpoint_id;
  r.latency_ms = latency_ms;
  save_png(dir_ / r.sketch, sketch);
  save_png(dir_ / r.painting, painting);
  records_.insert(records_.begin(), r);
  try {
    write_index();
  } catch (...) {
    records_.erase(records_.begin());
    throw;
  }
  return r;
}

GalleryPage Gallery::page(int page, int page_size) const {
  if (page < 1) throw RequestError(400, "invalid_page", "page must be >= 1");
  if (page_size < 1 || page_size > 100)
    throw RequestError(400, "invalid_page_size", "page_size must be in [1, 100]");
  std::lock_guard lock(mu_);
  GalleryPage out;
  out.page = page;
  out.page_size = page_size;
  out.total = static_cast<int>(records_.size());
  const std::size_t begin = static_cast<std::size_t>(page - 1) * page_size;
  for (std::size_t i = begin; i < records_.size() && i < begin + page_size; ++i)
    out.records.push_back(records_[i]);
  return out;
}

std::optional<GenerationRecord> Gallery::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  for (const auto& r : records_)
    if (r.id == id) return r;
  return std::nullopt;
}

std::vector<GenerationRecord> Gallery::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t Gallery::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::size_t export_collection(const fs::path& gallery_dir, const fs::path& out_dir) {
  const auto records = read_gallery_index(gallery_dir);
  if (records.empty()) throw DomainError("gallery " + gallery_dir.string() + " has no records");
  fs::create_directories(out_dir);
  json index = json::array();
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const Raster painting = to_rgb(load_raster(gallery_dir / r.painting));
    Raster sketch = to_rgb(load_raster(gallery_dir / r.sketch));
    if (sketch.width != painting.width || sketch.height != painting.height)
      sketch = resize(sketch, painting.width, painting.height);
    const Raster parts[] = {sketch, painting};
    const std::string name = "pair_" + std::to_string(k) + ".png";
    save_png(out_dir / name, hconcat(parts));
    json entry = to_json(r);
    entry["pair"] = name;
    index.push_back(entry);
  }
  std::ofstream out(out_dir / "index.json", std::ios::trunc);
  out << json{{"records", index}}.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (out_dir / "index.json").string());
  return records.size();
}

// ----------------------------------------------------------------- worker

ModelWorker::ModelWorker(std::unique_ptr<Translator> model, int capacity)
    : model_(std::move(model)), capacity_(capacity) {
  if (!model_) throw DomainError("model worker needs a model");
  if (capacity_ < 1) throw DomainError("queue capacity must be >= 1");
  thread_ = std::thread([this] { run(); });
}

ModelWorker::~ModelWorker() { shutdown(); }

std::optional<std::future<Raster>> ModelWorker::submit(nn::TensorImage<float> sketch) {
  std::lock_guard lock(mu_);
  if (stopping_ || depth_.load() >= capacity_) return std::nullopt;
  ++depth_;
  jobs_.push_back(Job{std::move(sketch), {}});
  auto future = jobs_.back().result.get_future();
  cv_.notify_one();
  return future;
}

void ModelWorker::run() {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    Raster out;
    std::exception_ptr error;
    try {
      out = translate(*model_, job.sketch);
    } catch (...) {
      error = std::current_exception();
    }
    --depth_;
    if (error) job.result.set_exception(error);
    else job.result.set_value(std::move(out));
  }
}

void ModelWorker::shutdown() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------- service

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, error_body(code, message));
}

int query_int(const httplib::Request& req, const std::string& key, int fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw RequestError(400, "invalid_" + key, key + " must be an integer, got '" + v + "'");
  }
}

std::vector<std::uint8_t> sketch_bytes(const httplib::Request& req) {
  if (req.is_multipart_form_data()) {
    if (!req.has_file("sketch"))
      throw RequestError(400, "missing_sketch", "multipart body has no 'sketch' field");
    const auto& content = req.get_file_value("sketch").content;
    return {content.begin(), content.end()};
  }
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::exception&) {
    throw RequestError(400, "invalid_body",
                       "expected multipart field 'sketch' or JSON {\"sketch_base64\": ...}");
  }
  if (!body.is_object() || !body.contains("sketch_base64") || !body["sketch_base64"].is_string())
    throw RequestError(400, "missing_sketch", "JSON body has no string 'sketch_base64'");
  std::string text = body["sketch_base64"].get<std::string>();
  // Canvas clients send data URLs.
  if (text.rfind("data:", 0) == 0) {
    const auto comma = text.find(',');
    if (comma == std::string::npos)
      throw RequestError(400, "invalid_base64", "data URL has no payload");
    text.erase(0, comma + 1);
  }
  return base64_decode(text);
}

}  // namespace

Service::Service(ServiceConfig cfg, std::unique_ptr<Translator> model)
    : cfg_((cfg.validate(), std::move(cfg))),
      checkpoint_id_(model ? model->checkpoint_id() : std::string()),
      worker_(std::move(model), cfg_.queue_capacity),
      gallery_(cfg_.gallery_dir),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Service::~Service() { stop(); }

json Service::handle_generate(std::vector<std::uint8_t> png) {
  const auto t0 = std::chrono::steady_clock::now();
  auto sketch = preprocess_sketch(png, cfg_.input_size);
  const Raster sketch_raster = nn::to_raster(sketch);
  auto future = worker_.submit(std::move(sketch));
  if (!future) throw RequestError(503, "queue_full", "generation queue is full, retry shortly");
  const Raster painting = future->get();
  const auto png_out = encode_png(painting);
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const auto record = gallery_.add(sketch_raster, painting, checkpoint_id_, latency);
  return {{"id", record.id}, {"painting_base64", base64_encode(png_out)}, {"latency_ms", latency}};
}

void Service::install_routes() {
  auto& srv = *server_;
  const int threads = cfg_.http_threads;
  srv.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  srv.set_payload_max_length(32u << 20);
  // httplib defaults to SO_REUSEPORT, which lets a second server share a busy port.
  srv.set_socket_options([](socket_t sock) {
    const int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const RequestError& e) {
      if (e.status() == 503) res.set_header("Retry-After", "1");
      send_error(res, e.status(), e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    } catch (...) {
      send_error(res, 500, "internal", "unknown failure");
    }
  });
  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    if (res.status == 404) send_error(res, 404, "not_found", "no route for " + req.path);
    else send_error(res, res.status, "http_" + std::to_string(res.status), httplib::status_message(res.status));
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
    if (!ready()) throw RequestError(503, "warming_up", "model is still warming up");
    send_json(res, 200, handle_generate(sketch_bytes(req)));
  });

  srv.Get("/api/gallery", [this](const httplib::Request& req, httplib::Response& res) {
    const auto page = gallery_.page(query_int(req, "page", 1), query_int(req, "page_size", 20));
    json records = json::array();
    for (const auto& r : page.records) {
      json j = to_json(r);
      j["sketch_url"] = "/api/gallery/" + r.id + "/sketch";
      j["painting_url"] = "/api/gallery/" + r.id + "/painting";
      records.push_back(j);
    }
    send_json(res, 200,
              {{"page", page.page}, {"page_size", page.page_size}, {"total", page.total},
               {"records", records}});
  });

  srv.Get(R"(/api/gallery/([^/]+)/(sketch|painting))",
          [this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const auto record = gallery_.find(id);
            if (!record) throw RequestError(404, "unknown_id", "no gallery record '" + id + "'");
            const auto& rel = req.matches[2] == "sketch" ? record->sketch : record->painting;
            const auto bytes = read_file(gallery_.dir() / rel);
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
          });

  srv.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    json body = {{"checkpoint_id", checkpoint_id_}, {"queue_depth", worker_.depth()}};
    if (ready()) {
      body["status"] = "ok";
      send_json(res, 200, body);
    } else {
      body["status"] = "warming_up";
      body.update(error_body("warming_up", "model is still warming up"));
      res.set_header("Retry-After", "1");
      send_json(res, 503, body);
    }
  });

  if (!cfg_.static_dir.empty() && !srv.set_mount_point("/", cfg_.static_dir.string()))
    throw IoError("static dir not found: " + cfg_.static_dir.string());
}

int Service::start() {
  port_ = cfg_.port == 0 ? server_->bind_to_any_port(cfg_.host)
                         : (server_->bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
  if (port_ < 0) throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  listener_ = std::thread([this] { server_->listen_after_bind(); });

  // The warm-up job occupies the worker like any request, so the blank
  // sketch counts against the queue until it completes.
  auto blank = nn::TensorImage<float>::constant(3, cfg_.input_size, cfg_.input_size, 1.0f);
  auto future = worker_.submit(std::move(blank));
  warmup_ = std::thread([this, f = std::move(*future)]() mutable {
    try {
      f.get();
      warm_state_ = kWarm;
    } catch (const std::exception& e) {
      warmup_error_ = e.what();
      std::cerr << "warm-up failed: " << e.what() << '\n';
      warm_state_ = kFailed;
    }
    warm_state_.notify_all();
  });
  server_->wait_until_ready();
  return port_;
}

void Service::wait_ready() const {
  warm_state_.wait(kPending);
  if (warm_state_ != kWarm) throw RequestError(500, "model_fault", "warm-up failed: " + warmup_error_);
}

void Service::stop() {
  if (stopped_) return;
  stopped_ = true;
  server_->stop();
  if (listener_.joinable()) listener_.join();
  worker_.shutdown();
  if (warmup_.joinable()) warmup_.join();
}

}  // namespace shanshui::service
