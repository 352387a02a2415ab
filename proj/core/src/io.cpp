#include "msac/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace msac {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t off) {
  return static_cast<std::uint32_t>(in[off]) | (static_cast<std::uint32_t>(in[off + 1]) << 8) |
         (static_cast<std::uint32_t>(in[off + 2]) << 16) |
         (static_cast<std::uint32_t>(in[off + 3]) << 24);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

double get_f64(const std::vector<std::uint8_t>& in, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

constexpr char kMagic[4] = {'M', 'S', 'T', '1'};

}  // namespace

std::vector<std::uint8_t> encode_mst1(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.rank() + 8 * t.size());
  for (char c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t ax = 0; ax < t.rank(); ++ax)
    put_u32(out, static_cast<std::uint32_t>(t.dim(ax)));
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  return out;
}

Tensor decode_mst1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw std::runtime_error("MST1: truncated header");
  for (int i = 0; i < 4; ++i)
    if (bytes[i] != static_cast<std::uint8_t>(kMagic[i]))
      throw std::runtime_error("MST1: wrong magic bytes");
  std::uint32_t rank = get_u32(bytes, 4);
  std::size_t off = 8;
  if (bytes.size() < off + 4ull * rank) throw std::runtime_error("MST1: truncated dims");
  Shape shape(rank);
  std::size_t numel = 1;
  for (std::uint32_t ax = 0; ax < rank; ++ax) {
    std::uint32_t dim = get_u32(bytes, off);
    off += 4;
    if (dim == 0) throw std::runtime_error("MST1: zero dimension");
    shape[ax] = dim;
    numel *= dim;
  }
  if (bytes.size() < off + 8ull * numel) throw std::runtime_error("MST1: truncated payload");
  if (bytes.size() > off + 8ull * numel) throw std::runtime_error("MST1: trailing data");
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i) data[i] = get_f64(bytes, off + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor_mst1(const Tensor& t, const std::string& path) {
  std::vector<std::uint8_t> bytes = encode_mst1(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor read_tensor_mst1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_mst1(bytes);
}

void save_tensor_dir(const std::string& dir, const std::vector<TensorEntry>& entries) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "msac-params";
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  for (const TensorEntry& e : entries) {
    write_tensor_mst1(e.tensor, dir + "/" + e.file);
    nlohmann::json j;
    j["file"] = e.file;
    j["role"] = e.role;
    if (e.scale >= 0) j["scale"] = e.scale;
    if (e.head >= 0) j["head"] = e.head;
    if (e.layer >= 0) j["layer"] = e.layer;
    manifest["tensors"].push_back(j);
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

std::vector<TensorEntry> load_tensor_dir(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "msac-params")
    throw std::runtime_error("manifest: unknown format field");
  std::vector<TensorEntry> entries;
  for (const auto& j : manifest.at("tensors")) {
    TensorEntry e;
    e.file = j.at("file").get<std::string>();
    e.role = j.at("role").get<std::string>();
    e.scale = j.value("scale", -1);
    e.head = j.value("head", -1);
    e.layer = j.value("layer", -1);
    e.tensor = read_tensor_mst1(dir + "/" + e.file);
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace {

std::string entry_file_name(const std::string& role, int scale, int head, int layer) {
  std::string name;
  if (layer >= 0) name += "l" + std::to_string(layer) + "_";
  if (scale >= 0) name += "s" + std::to_string(scale) + "_";
  if (head >= 0) name += "h" + std::to_string(head) + "_";
  return name + role + ".mst1";
}

TensorEntry make_entry(const std::string& role, Tensor t, int scale = -1, int head = -1,
                       int layer = -1) {
  TensorEntry e;
  e.role = role;
  e.scale = scale;
  e.head = head;
  e.layer = layer;
  e.file = entry_file_name(role, scale, head, layer);
  e.tensor = std::move(t);
  return e;
}

}  // namespace

std::vector<TensorEntry> entries_from_msac(const MSACParams& p, int layer) {
  std::vector<TensorEntry> entries;
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    const SACParams& sc = p.scales[s];
    int si = static_cast<int>(s);
    for (std::size_t h = 0; h < sc.mh.heads.size(); ++h) {
      const AttentionParams& head = sc.mh.heads[h];
      int hi = static_cast<int>(h);
      entries.push_back(make_entry("hq", head.hq.tensor, si, hi, layer));
      entries.push_back(make_entry("hk", head.hk.tensor, si, hi, layer));
      entries.push_back(make_entry("hv", head.hv.tensor, si, hi, layer));
      if (head.bias) entries.push_back(make_entry("bias", *head.bias, si, hi, layer));
    }
    entries.push_back(make_entry("hy", sc.mh.hy.tensor, si, -1, layer));
    if (sc.hr) {
      entries.push_back(make_entry("hr", sc.hr->tensor, si, -1, layer));
      entries.push_back(make_entry("hy_fuse", sc.hy_fuse->tensor, si, -1, layer));
    }
  }
  entries.push_back(make_entry("hphi", p.hphi.tensor, -1, -1, layer));
  return entries;
}

MSACParams msac_from_entries(const std::vector<TensorEntry>& entries, int layer) {
  std::map<int, std::map<int, AttentionParams>> heads;  // scale -> head -> params
  std::map<int, SACParams> scales;
  MSACParams p;
  bool have_hphi = false;

  for (const TensorEntry& e : entries) {
    if (e.layer != layer) continue;
    if (e.role == "hq")
      heads[e.scale][e.head].hq = FilterBank(e.tensor);
    else if (e.role == "hk")
      heads[e.scale][e.head].hk = FilterBank(e.tensor);
    else if (e.role == "hv")
      heads[e.scale][e.head].hv = FilterBank(e.tensor);
    else if (e.role == "bias")
      heads[e.scale][e.head].bias = e.tensor;
    else if (e.role == "hy")
      scales[e.scale].mh.hy = FilterBank(e.tensor);
    else if (e.role == "hr")
      scales[e.scale].hr = FilterBank(e.tensor);
    else if (e.role == "hy_fuse")
      scales[e.scale].hy_fuse = FilterBank(e.tensor);
    else if (e.role == "hphi") {
      p.hphi = FilterBank(e.tensor);
      have_hphi = true;
    }
  }
  if (!have_hphi) throw std::runtime_error("manifest: missing hphi tensor");
  if (scales.empty()) throw std::runtime_error("manifest: no scales found");

  for (auto& [si, sc] : scales) {
    auto it = heads.find(si);
    if (it == heads.end() || it->second.empty())
      throw std::runtime_error("manifest: scale " + std::to_string(si) + " has no heads");
    for (auto& [hi, head] : it->second) sc.mh.heads.push_back(std::move(head));
    p.scales.push_back(std::move(sc));
  }
  p.validate();
  return p;
}

void save_msac_params(const MSACParams& p, const std::string& dir) {
  save_tensor_dir(dir, entries_from_msac(p));
}

MSACParams load_msac_params(const std::string& dir) {
  return msac_from_entries(load_tensor_dir(dir));
}

MsacConfig msac_config_from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MsacConfig cfg;
  cfg.d = j.at("d").get<std::size_t>();
  cfg.d_a = j.at("d_a").get<std::size_t>();
  cfg.d_o = j.at("d_o").get<std::size_t>();
  cfg.heads = j.value("heads", std::size_t{1});
  cfg.scales.clear();
  for (const auto& s : j.at("scales")) {
    require(s.is_array() && s.size() == 2, "msac config: each scale must be [n, m]");
    cfg.scales.emplace_back(s[0].get<std::size_t>(), s[1].get<std::size_t>());
  }
  cfg.parallel_conv = j.value("parallel_conv", false);
  cfg.bias = j.value("bias", false);
  cfg.seed = j.value("seed", std::uint64_t{42});
  return cfg;
}

MsacConfig load_msac_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return msac_config_from_json_text(text);
}

std::string msac_config_to_json_text(const MsacConfig& cfg) {
  nlohmann::json j;
  j["d"] = cfg.d;
  j["d_a"] = cfg.d_a;
  j["d_o"] = cfg.d_o;
  j["heads"] = cfg.heads;
  j["scales"] = nlohmann::json::array();
  for (auto [n, m] : cfg.scales) j["scales"].push_back({n, m});
  j["parallel_conv"] = cfg.parallel_conv;
  j["bias"] = cfg.bias;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

}  // namespace msac
