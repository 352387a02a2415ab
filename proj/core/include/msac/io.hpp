#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msac/sac.hpp"
#include "msac/tensor.hpp"

namespace msac {

// Binary tensor format MST1: magic "MST1", u32 LE rank, u32 LE dims,
// then product(dims) little-endian IEEE-754 doubles.
std::vector<std::uint8_t> encode_mst1(const Tensor& t);
Tensor decode_mst1(const std::vector<std::uint8_t>& bytes);
void write_tensor_mst1(const Tensor& t, const std::string& path);
Tensor read_tensor_mst1(const std::string& path);

// One tensor inside a saved parameter directory. Indices are -1 when the role
// is not scoped to a scale/head/layer.
struct TensorEntry {
  std::string file;
  std::string role;
  int scale = -1;
  int head = -1;
  int layer = -1;
  Tensor tensor;
};

// Writes every tensor as an MST1 file plus a manifest.json naming each one.
void save_tensor_dir(const std::string& dir, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> load_tensor_dir(const std::string& dir);

std::vector<TensorEntry> entries_from_msac(const MSACParams& p, int layer = -1);
MSACParams msac_from_entries(const std::vector<TensorEntry>& entries, int layer = -1);

void save_msac_params(const MSACParams& p, const std::string& dir);
MSACParams load_msac_params(const std::string& dir);

MsacConfig msac_config_from_json_text(const std::string& text);
MsacConfig load_msac_config(const std::string& path);
std::string msac_config_to_json_text(const MsacConfig& cfg);

}  // namespace msac
