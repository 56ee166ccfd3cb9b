#include "specmix/dataio.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "specmix/error.hpp"

namespace specmix {

namespace {

using json = nlohmann::ordered_json;

constexpr double kSimplexTolerance = 0.01;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

std::vector<std::uint8_t> floats_to_bytes(const float* values, std::size_t n) {
  std::vector<std::uint8_t> out(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t w = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + 4 * i, &w, 4);
  }
  return out;
}

std::vector<float> bytes_to_floats(const std::uint8_t* bytes, std::size_t n) {
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t w;
    std::memcpy(&w, bytes + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_little(w));
  }
  return out;
}

std::vector<std::uint8_t> read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": malformed JSON: " + e.what());
  }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field \"" + key + "\" has the wrong type");
  }
}

// The container shared by cubes and abundance fields.
struct Container {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> data;
  std::vector<double> wavelengths;
  std::vector<std::string> band_names;
};

void write_container(const std::string& path, const Container& c) {
  if (c.data.size() != c.height * c.width * c.bands) {
    throw ShapeError("write " + path + ": data holds " + std::to_string(c.data.size()) + " values, header implies " +
                     std::to_string(c.height * c.width * c.bands));
  }
  const std::string stem = container_stem(path);
  json h;
  h["format_version"] = kFormatVersion;
  h["height"] = c.height;
  h["width"] = c.width;
  h["bands"] = c.bands;
  h["dtype"] = "f32";
  h["layout"] = "bip";
  h["byte_order"] = "little";
  if (!c.wavelengths.empty()) h["wavelengths"] = c.wavelengths;
  if (!c.band_names.empty()) h["band_names"] = c.band_names;
  write_text(stem + ".json", h.dump(2) + "\n");
  write_binary(stem + ".f32", floats_to_bytes(c.data.data(), c.data.size()));
}

Container read_container(const std::string& path) {
  const std::string stem = container_stem(path);
  const std::string header_path = stem + ".json";
  const json h = parse_json(read_text(header_path), header_path);
  const int version = get_field<int>(h, "format_version", header_path);
  if (version != kFormatVersion) {
    throw DataError(header_path + ": unknown format_version " + std::to_string(version) + " (expected " +
                    std::to_string(kFormatVersion) + ")");
  }
  if (get_field<std::string>(h, "dtype", header_path) != "f32") throw DataError(header_path + ": dtype must be f32");
  if (get_field<std::string>(h, "layout", header_path) != "bip") throw DataError(header_path + ": layout must be bip");
  if (h.contains("byte_order") && h.at("byte_order") != "little") {
    throw DataError(header_path + ": byte_order must be little");
  }
  Container c;
  c.height = get_field<std::size_t>(h, "height", header_path);
  c.width = get_field<std::size_t>(h, "width", header_path);
  c.bands = get_field<std::size_t>(h, "bands", header_path);
  if (c.height == 0 || c.width == 0 || c.bands == 0) throw DataError(header_path + ": zero-sized dimension");
  if (h.contains("wavelengths")) c.wavelengths = get_field<std::vector<double>>(h, "wavelengths", header_path);
  if (h.contains("band_names")) c.band_names = get_field<std::vector<std::string>>(h, "band_names", header_path);
  if (!c.wavelengths.empty() && c.wavelengths.size() != c.bands) {
    throw DataError(header_path + ": " + std::to_string(c.wavelengths.size()) + " wavelengths for " +
                    std::to_string(c.bands) + " bands");
  }
  if (!c.band_names.empty() && c.band_names.size() != c.bands) {
    throw DataError(header_path + ": " + std::to_string(c.band_names.size()) + " band names for " +
                    std::to_string(c.bands) + " bands");
  }

  const std::string payload_path = stem + ".f32";
  const auto bytes = read_binary(payload_path);
  const std::size_t expected = cube_payload_bytes(c.height, c.width, c.bands);
  if (bytes.size() != expected) {
    throw DataError(payload_path + ": payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected));
  }
  c.data = bytes_to_floats(bytes.data(), c.height * c.width * c.bands);
  for (std::size_t i = 0; i < c.data.size(); ++i) {
    if (!std::isfinite(c.data[i])) {
      throw DataError(payload_path + ": non-finite value at byte offset " + std::to_string(4 * i));
    }
  }
  return c;
}

json tensor_json(const Tensor<float>& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = base64_encode(floats_to_bytes(t.data(), t.size()));
  return j;
}

Tensor<float> tensor_from_json(const json& j, const Shape& expected, const std::string& name) {
  const auto shape = get_field<Shape>(j, "shape", name);
  if (shape != expected) {
    throw DataError("checkpoint: " + name + " has shape " + shape_str(shape) + ", expected " + shape_str(expected));
  }
  const auto bytes = base64_decode(get_field<std::string>(j, "data", name));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 4 * n) {
    throw DataError("checkpoint: " + name + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(4 * n));
  }
  Tensor<float> t(shape);
  const auto values = bytes_to_floats(bytes.data(), n);
  std::copy(values.begin(), values.end(), t.data());
  if (!t.all_finite()) throw DataError("checkpoint: " + name + " contains non-finite values");
  return t;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(what + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(what + ": field \"" + key + "\" has the wrong type");
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string container_stem(const std::string& path) {
  for (const char* ext : {".json", ".f32"}) {
    const std::string e(ext);
    if (path.size() > e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0) {
      return path.substr(0, path.size() - e.size());
    }
  }
  return path;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

void write_cube(const std::string& path, const HyperspectralCube& cube) {
  write_container(path, Container{cube.height, cube.width, cube.bands, cube.data, cube.wavelengths, cube.band_names});
}

HyperspectralCube read_cube(const std::string& path) {
  auto c = read_container(path);
  HyperspectralCube cube;
  cube.height = c.height;
  cube.width = c.width;
  cube.bands = c.bands;
  cube.data = std::move(c.data);
  cube.wavelengths = std::move(c.wavelengths);
  cube.band_names = std::move(c.band_names);
  return cube;
}

void write_abundance(const std::string& path, const AbundanceField& field) {
  Container c{field.height, field.width, field.materials, {}, {}, field.names};
  c.data.reserve(field.data.size());
  for (double v : field.data) c.data.push_back(static_cast<float>(v));
  write_container(path, c);
}

AbundanceField read_abundance(const std::string& path) {
  auto c = read_container(path);
  AbundanceField f;
  f.height = c.height;
  f.width = c.width;
  f.materials = c.bands;
  f.names = std::move(c.band_names);
  f.data.assign(c.data.begin(), c.data.end());
  for (std::size_t p = 0; p < f.pixels(); ++p) {
    auto row = f.pixel(p);
    double total = 0;
    for (double& v : row) {
      if (v < 0) {
        throw DataError(path + ": negative fraction at pixel " + std::to_string(p));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance) {
      throw DataError(path + ": fractions at pixel " + std::to_string(p) + " sum to " + std::to_string(total) +
                      ", outside 1 +- " + std::to_string(kSimplexTolerance));
    }
    for (double& v : row) v /= total;
  }
  return f;
}

void write_endmembers(const std::string& path, const EndmemberMatrix& e) {
  std::string text;
  for (std::size_t k = 0; k < e.materials; ++k) {
    if (k) text += ',';
    text += k < e.names.size() ? e.names[k] : "material" + std::to_string(k);
  }
  text += '\n';
  char buf[32];
  for (std::size_t d = 0; d < e.bands; ++d) {
    for (std::size_t k = 0; k < e.materials; ++k) {
      if (k) text += ',';
      std::snprintf(buf, sizeof(buf), "%.17g", e.at(d, k));
      text += buf;
    }
    text += '\n';
  }
  write_text(path, text);
}

EndmemberMatrix read_endmembers(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty endmember file");
  EndmemberMatrix e;
  e.names = split_csv_line(line);
  e.materials = e.names.size();
  if (e.materials == 0) throw DataError(path + ": header row names no materials");
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != e.materials) {
      throw DataError(path + ":" + std::to_string(row) + ": expected " + std::to_string(e.materials) + " values, got " +
                      std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(row) + ": cannot parse \"" + cells[k] + "\" as a number");
      }
      if (!std::isfinite(v)) throw DataError(path + ":" + std::to_string(row) + ": non-finite value");
      if (v < 0) throw DataError(path + ":" + std::to_string(row) + ": negative reflectance");
      e.data.push_back(v);
    }
    ++e.bands;
  }
  if (e.bands == 0) throw DataError(path + ": no spectral rows");
  for (std::size_t k = 0; k < e.materials; ++k) {
    double norm = 0;
    for (std::size_t d = 0; d < e.bands; ++d) norm += e.at(d, k) * e.at(d, k);
    if (norm == 0) throw DataError(path + ": endmember column \"" + e.names[k] + "\" is all zeros");
  }
  return e;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw DataError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=' && i + 4 == text.size() && j >= 2) {
        v[j] = 0;
        ++pad;
        continue;
      }
      if (pad) throw DataError("base64: data after padding");
      v[j] = value(c);
      if (v[j] < 0) throw DataError("base64: invalid character at offset " + std::to_string(i + j));
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

std::string checkpoint_json(const ModelParams<float>& model) {
  json j;
  j["format_version"] = kFormatVersion;
  const auto& d = model.dims;
  j["dims"] = {{"D", d.bands}, {"K", d.materials}, {"M", d.latent}, {"N", d.components}, {"P", d.noise}};
  json params = json::object();
  json adam = json::object();
  for (const auto& e : model.params.entries()) {
    params[e.name] = tensor_json(e.var.value());
    json a;
    a["t"] = e.adam_t;
    a["m"] = tensor_json(e.adam_m);
    a["v"] = tensor_json(e.adam_v);
    adam[e.name] = std::move(a);
  }
  json buffers = json::object();
  for (const auto& [name, t] : model.params.buffers()) buffers[name] = tensor_json(t);
  j["params"] = std::move(params);
  j["buffers"] = std::move(buffers);
  j["adam"] = std::move(adam);
  return j.dump() + "\n";
}

ModelParams<float> checkpoint_from_json(const std::string& text) {
  const json j = parse_json(text, "checkpoint");
  const int version = get_field<int>(j, "format_version", "checkpoint");
  if (version != kFormatVersion) throw DataError("checkpoint: unknown format_version " + std::to_string(version));
  const json dj = get_field<json>(j, "dims", "checkpoint");
  ModelDims dims{get_field<std::size_t>(dj, "D", "checkpoint dims"), get_field<std::size_t>(dj, "K", "checkpoint dims"),
                 get_field<std::size_t>(dj, "M", "checkpoint dims"), get_field<std::size_t>(dj, "N", "checkpoint dims"),
                 get_field<std::size_t>(dj, "P", "checkpoint dims")};
  try {
    validate_dims(dims);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }

  // The layout of a freshly initialised model fixes names, shapes and order.
  auto model = init_params<float>(0, dims);
  const json params = get_field<json>(j, "params", "checkpoint");
  const json buffers = get_field<json>(j, "buffers", "checkpoint");
  const json adam = j.contains("adam") ? j.at("adam") : json::object();
  if (params.size() != model.params.entries().size()) {
    throw DataError("checkpoint: holds " + std::to_string(params.size()) + " parameters, model expects " +
                    std::to_string(model.params.entries().size()));
  }
  for (auto& e : model.params.entries()) {
    if (!params.contains(e.name)) throw DataError("checkpoint: missing parameter " + e.name);
    const Shape shape = e.var.shape();
    e.var.mutable_value() = tensor_from_json(params.at(e.name), shape, e.name);
    if (adam.contains(e.name)) {
      const auto& a = adam.at(e.name);
      e.adam_t = get_field<std::uint64_t>(a, "t", e.name);
      e.adam_m = tensor_from_json(get_field<json>(a, "m", e.name), shape, e.name + " (adam m)");
      e.adam_v = tensor_from_json(get_field<json>(a, "v", e.name), shape, e.name + " (adam v)");
    }
  }
  for (auto& [name, t] : model.params.buffers()) {
    if (!buffers.contains(name)) throw DataError("checkpoint: missing buffer " + name);
    t = tensor_from_json(buffers.at(name), t.shape(), name);
  }
  return model;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& model) {
  write_text(path, checkpoint_json(model));
}

ModelParams<float> load_checkpoint(const std::string& path) { return checkpoint_from_json(read_text(path)); }

std::string train_config_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr_gen"] = cfg.lr_gen;
  j["lr_critic"] = cfg.lr_critic;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["n_critic"] = cfg.n_critic;
  j["components"] = cfg.components;
  j["latent"] = cfg.latent;
  j["noise"] = cfg.noise;
  j["lambda_pq"] = cfg.weights.lambda_pq;
  j["lambda_adv"] = cfg.weights.lambda_adv;
  j["lambda_u"] = cfg.weights.lambda_u;
  j["lambda_r"] = cfg.weights.lambda_r;
  j["ablate_eu"] = cfg.ablate_eu;
  j["ablate_wgan"] = cfg.ablate_wgan;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: malformed JSON: ") + e.what());
  }
  const std::string what = "train config";
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr_gen", "lr_critic", "adam_beta1", "adam_beta2", "adam_eps",
                       "n_critic", "components", "latent", "noise", "lambda_pq", "lambda_adv", "lambda_u", "lambda_r",
                       "ablate_eu", "ablate_wgan", "seed"},
                      what);
  read_opt(j, "epochs", cfg.epochs, what);
  read_opt(j, "batch_size", cfg.batch_size, what);
  read_opt(j, "lr_gen", cfg.lr_gen, what);
  read_opt(j, "lr_critic", cfg.lr_critic, what);
  read_opt(j, "adam_beta1", cfg.adam_beta1, what);
  read_opt(j, "adam_beta2", cfg.adam_beta2, what);
  read_opt(j, "adam_eps", cfg.adam_eps, what);
  read_opt(j, "n_critic", cfg.n_critic, what);
  read_opt(j, "components", cfg.components, what);
  read_opt(j, "latent", cfg.latent, what);
  read_opt(j, "noise", cfg.noise, what);
  read_opt(j, "lambda_pq", cfg.weights.lambda_pq, what);
  read_opt(j, "lambda_adv", cfg.weights.lambda_adv, what);
  read_opt(j, "lambda_u", cfg.weights.lambda_u, what);
  read_opt(j, "lambda_r", cfg.weights.lambda_r, what);
  read_opt(j, "ablate_eu", cfg.ablate_eu, what);
  read_opt(j, "ablate_wgan", cfg.ablate_wgan, what);
  read_opt(j, "seed", cfg.seed, what);
  return cfg;
}

std::string scene_config_json(const SceneConfig& cfg) {
  json j;
  j["height"] = cfg.height;
  j["width"] = cfg.width;
  j["materials"] = cfg.materials;
  j["bands"] = cfg.bands;
  j["blobs_per_material"] = cfg.blobs_per_material;
  j["blob_sigma"] = cfg.effective_blob_sigma();
  j["noise_sigma"] = cfg.noise_sigma;
  j["variability_scale"] = cfg.variability_scale;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

SceneConfig scene_config_from_json(const std::string& text, SceneConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: malformed JSON: ") + e.what());
  }
  const std::string what = "scene config";
  reject_unknown_keys(j,
                      {"height", "width", "materials", "bands", "blobs_per_material", "blob_sigma", "noise_sigma",
                       "variability_scale", "seed"},
                      what);
  read_opt(j, "height", cfg.height, what);
  read_opt(j, "width", cfg.width, what);
  read_opt(j, "materials", cfg.materials, what);
  read_opt(j, "bands", cfg.bands, what);
  read_opt(j, "blobs_per_material", cfg.blobs_per_material, what);
  read_opt(j, "blob_sigma", cfg.blob_sigma, what);
  read_opt(j, "noise_sigma", cfg.noise_sigma, what);
  read_opt(j, "variability_scale", cfg.variability_scale, what);
  read_opt(j, "seed", cfg.seed, what);
  return cfg;
}

std::string history_json(const TrainHistory& history, bool include_timing) {
  json arr = json::array();
  for (const auto& r : history.epochs) {
    arr.push_back({{"epoch", r.epoch},
                   {"sad", r.sad},
                   {"critic_loss", r.critic_loss},
                   {"penalty", r.penalty},
                   {"grad_norm", r.grad_norm},
                   {"gap", r.gap}});
    if (include_timing) arr.back()["seconds"] = r.seconds;
  }
  return json{{"epochs", arr}}.dump(2) + "\n";
}

}  // namespace specmix
