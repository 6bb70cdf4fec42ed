#include "shanshui/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace shanshui::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kPreambleSize = sizeof(kMagic) + 4 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string shape_text(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw FormatError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::uint64_t content_id(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  json header = file.header;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : file.tensors) {
    if (element_count(t.shape) != t.values.size())
      throw DomainError("tensor " + t.name + " has values that do not match its shape");
    table.push_back({{"name", t.name}, {"section", t.section}, {"shape", t.shape},
                     {"offset", offset}});
    offset += 4 * t.values.size();
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleSize + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  put_u32(out, file.version);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : file.tensors) {
    const std::size_t start = out.size();
    out.resize(start + 4 * t.values.size());
    std::uint8_t* dst = out.data() + start;
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, t.values.data(), 4 * t.values.size());
    } else {
      for (float f : t.values) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) *dst++ = static_cast<std::uint8_t>(bits >> (8 * i));
      }
    }
  }
  return out;
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a checkpoint: bad magic");
  CheckpointFile file;
  file.version = static_cast<std::uint32_t>(get_le(bytes.data() + 8, 4));
  if (file.version != kFormatVersion) {
    throw FormatError("checkpoint format version " + std::to_string(file.version) +
                      " is not supported (expected version " + std::to_string(kFormatVersion) +
                      ")");
  }
  const std::uint64_t header_len = get_le(bytes.data() + 12, 8);
  if (header_len > bytes.size() - kPreambleSize) throw FormatError("checkpoint header truncated");
  const auto* hdr = reinterpret_cast<const char*>(bytes.data() + kPreambleSize);
  try {
    file.header = json::parse(hdr, hdr + header_len);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("corrupted checkpoint header: ") + e.what());
  }
  if (!file.header.is_object() || !file.header.contains("tensors") ||
      !file.header["tensors"].is_array())
    throw FormatError("corrupted checkpoint header: no tensor table");

  const std::uint8_t* payload = bytes.data() + kPreambleSize + header_len;
  const std::uint64_t payload_len = bytes.size() - kPreambleSize - header_len;
  std::set<std::pair<std::string, std::string>> seen;
  try {
    for (const auto& entry : file.header["tensors"]) {
      TensorRecord t;
      t.name = entry.at("name").get<std::string>();
      t.section = entry.at("section").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t n = element_count(t.shape);
      if (!seen.emplace(t.section, t.name).second)
        throw FormatError("duplicate tensor " + t.section + "/" + t.name);
      if (offset > payload_len || 4 * static_cast<std::uint64_t>(n) > payload_len - offset)
        throw FormatError("tensor " + t.name + " extends past the end of the file");
      t.values.resize(n);
      const std::uint8_t* src = payload + offset;
      for (std::size_t i = 0; i < n; ++i)
        t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(src + 4 * i, 4)));
      file.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupted checkpoint tensor table: ") + e.what());
  }
  file.header.erase("tensors");
  return file;
}

void write_checkpoint_file(const fs::path& path, const CheckpointFile& file) {
  const auto bytes = encode_checkpoint(file);
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot write " + path.string() + ": " + ec.message());
  }
}

CheckpointFile read_checkpoint_file(const fs::path& path) {
  return decode_checkpoint(read_file(path));
}

namespace {

TensorRecord record(const std::string& name, const std::string& section,
                    const std::vector<int>& shape, const float* data, std::size_t n) {
  return {name, section, shape, std::vector<float>(data, data + n)};
}

json model_json(const nn::ModelConfig& m) {
  return {{"generator_filters", m.generator.base_filters},
          {"n_res_blocks", m.generator.n_res_blocks},
          {"instance_norm", m.generator.instance_norm},
          {"discriminator_filters", m.discriminator.base_filters},
          {"discriminator_layers", m.discriminator.n_downsample_layers}};
}

nn::ModelConfig model_from_json(const json& j) {
  nn::ModelConfig m;
  m.generator.base_filters = j.at("generator_filters").get<int>();
  m.generator.n_res_blocks = j.at("n_res_blocks").get<int>();
  m.generator.instance_norm = j.at("instance_norm").get<bool>();
  m.discriminator.base_filters = j.at("discriminator_filters").get<int>();
  m.discriminator.n_downsample_layers = j.at("discriminator_layers").get<int>();
  return m;
}

void append_pool(std::vector<TensorRecord>& out, const std::string& section,
                 const nn::ImagePool<float>& pool) {
  for (std::size_t i = 0; i < pool.stored().size(); ++i) {
    const auto& img = pool.stored()[i];
    out.push_back(record(section + "." + std::to_string(i), section,
                         {img.channels, img.height, img.width}, img.data.data(),
                         static_cast<std::size_t>(img.size())));
  }
}

// Fills parameter-shaped sets from the tensor table. Every live name must be
// present once per section and nothing else may appear.
void fill_parameter_sections(const std::vector<TensorRecord>& tensors,
                             std::map<std::string, nn::ParameterSet<float>*> sections) {
  const auto& layout = sections.begin()->second->layout();
  std::vector<std::string> unknown;
  std::map<std::string, std::set<std::string>> found;
  for (const auto& t : tensors) {
    auto it = sections.find(t.section);
    if (it == sections.end()) continue;
    const int idx = layout.find(t.name);
    if (idx < 0) {
      unknown.push_back(t.section == "param" ? t.name : t.section + ":" + t.name);
      continue;
    }
    const auto& spec = layout.params()[static_cast<std::size_t>(idx)];
    if (t.shape != spec.shape) {
      throw FormatError("tensor " + t.name + " has shape " + shape_text(t.shape) +
                        ", expected " + shape_text(spec.shape));
    }
    auto& dst = it->second->value(static_cast<std::size_t>(idx));
    std::memcpy(dst.data(), t.values.data(), 4 * t.values.size());
    found[t.section].insert(t.name);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& n : unknown) list += (list.empty() ? "" : ", ") + n;
    throw FormatError("checkpoint has unknown tensors: " + list);
  }
  for (const auto& [section, set] : sections) {
    for (const auto& spec : layout.params()) {
      if (!found[section].count(spec.name))
        throw FormatError("checkpoint is missing tensor " + section + ":" + spec.name);
    }
  }
}

std::vector<nn::TensorImage<float>> read_pool(const std::vector<TensorRecord>& tensors,
                                              const std::string& section, std::size_t capacity,
                                              std::size_t expected) {
  std::map<std::size_t, nn::TensorImage<float>> by_index;
  for (const auto& t : tensors) {
    if (t.section != section) continue;
    const std::string prefix = section + ".";
    std::size_t index = 0;
    try {
      if (t.name.rfind(prefix, 0) != 0) throw std::invalid_argument("prefix");
      std::size_t used = 0;
      index = std::stoull(t.name.substr(prefix.size()), &used);
      if (used != t.name.size() - prefix.size()) throw std::invalid_argument("suffix");
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint has unknown tensors: " + t.name);
    }
    if (t.shape.size() != 3 || t.shape[0] != 3)
      throw FormatError("pool tensor " + t.name + " has shape " + shape_text(t.shape));
    nn::TensorImage<float> img(t.shape[0], t.shape[1], t.shape[2]);
    std::memcpy(img.data.data(), t.values.data(), 4 * t.values.size());
    by_index.emplace(index, std::move(img));
  }
  std::vector<nn::TensorImage<float>> out;
  for (auto& [i, img] : by_index) {
    if (i != out.size()) throw FormatError(section + " entries are not contiguous");
    out.push_back(std::move(img));
  }
  if (out.size() > capacity) throw FormatError(section + " holds more images than its capacity");
  if (out.size() != expected)
    throw FormatError(section + " holds " + std::to_string(out.size()) + " images, header says " +
                      std::to_string(expected));
  return out;
}

const std::set<std::string> kSections = {"param", "adam_m", "adam_v", "pool_a", "pool_b"};

}  // namespace

void save_checkpoint(const train::TrainState& state, const fs::path& path) {
  CheckpointFile file;
  json& h = file.header;
  h["generator_kind"] = "resnet";
  h["config"] = train::to_json(state.config);
  h["model"] = model_json(state.params.config());
  h["epoch"] = state.epoch;
  h["iteration"] = state.iteration;
  h["adam_steps"] = state.adam.steps;
  h["rng"] = {{"train", serialize_rng(state.rng)},
              {"pool_a", serialize_rng(state.pool_a.rng())},
              {"pool_b", serialize_rng(state.pool_b.rng())}};
  h["sampler"] = state.sampler.state();
  h["pool_sizes"] = {{"pool_a", state.pool_a.stored().size()},
                     {"pool_b", state.pool_b.stored().size()}};

  const auto& params = state.params;
  auto add_section = [&](const char* section, const nn::ParameterSet<float>& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& spec = params.spec(i);
      file.tensors.push_back(record(spec.name, section, spec.shape, set.value(i).data(),
                                    static_cast<std::size_t>(set.value(i).size())));
    }
  };
  add_section("param", params);
  add_section("adam_m", state.adam.m);
  add_section("adam_v", state.adam.v);
  append_pool(file.tensors, "pool_a", state.pool_a);
  append_pool(file.tensors, "pool_b", state.pool_b);
  write_checkpoint_file(path, file);
}

namespace {

train::TrainState state_from_file(const CheckpointFile& file) {
  const json& h = file.header;
  for (const auto& t : file.tensors)
    if (!kSections.count(t.section))
      throw FormatError("checkpoint has unknown tensors: " + t.section + ":" + t.name);
  try {
    if (h.at("generator_kind").get<std::string>() != "resnet")
      throw FormatError("checkpoint holds no trainable generator");
    train::TrainState s;
    s.config = train::train_config_from_json(h.at("config"));
    const nn::ModelConfig model = model_from_json(h.at("model"));
    if (!(model == s.config.model()))
      throw FormatError("checkpoint model description disagrees with its config");
    s.epoch = h.at("epoch").get<int>();
    s.iteration = h.at("iteration").get<std::int64_t>();
    s.params = nn::ParameterSet<float>(model);
    s.adam = nn::AdamState<float>(s.params);
    s.adam.steps = h.at("adam_steps").get<std::array<std::int64_t, 3>>();
    fill_parameter_sections(file.tensors,
                            {{"param", &s.params}, {"adam_m", &s.adam.m}, {"adam_v", &s.adam.v}});
    const auto capacity = static_cast<std::size_t>(s.config.pool_capacity);
    s.pool_a = nn::ImagePool<float>(capacity);
    s.pool_b = nn::ImagePool<float>(capacity);
    s.pool_a.restore(read_pool(file.tensors, "pool_a", capacity,
                               h.at("pool_sizes").at("pool_a").get<std::size_t>()),
                     deserialize_rng(h.at("rng").at("pool_a").get<std::string>()));
    s.pool_b.restore(read_pool(file.tensors, "pool_b", capacity,
                               h.at("pool_sizes").at("pool_b").get<std::size_t>()),
                     deserialize_rng(h.at("rng").at("pool_b").get<std::string>()));
    s.rng = deserialize_rng(h.at("rng").at("train").get<std::string>());
    s.sampler.restore(h.at("sampler"));
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupted checkpoint header: ") + e.what());
  } catch (const DomainError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

}  // namespace

train::TrainState load_checkpoint(const fs::path& path) {
  return state_from_file(read_checkpoint_file(path));
}

InferenceModel load_inference_model(const fs::path& path) {
  const auto bytes = read_file(path);
  const CheckpointFile file = decode_checkpoint(bytes);
  InferenceModel model;
  model.id = content_id(bytes);
  const auto kind = file.header.value("generator_kind", std::string());
  if (kind == "identity") {
    if (!file.tensors.empty())
      throw FormatError("identity checkpoint must not carry tensors");
    model.kind = kind;
    return model;
  }
  train::TrainState state = state_from_file(file);
  model.kind = "resnet";
  model.params = std::move(state.params);
  model.epoch = state.epoch;
  return model;
}

void save_identity_checkpoint(const fs::path& path) {
  CheckpointFile file;
  file.header["generator_kind"] = "identity";
  write_checkpoint_file(path, file);
}

}  // namespace shanshui::ckpt
