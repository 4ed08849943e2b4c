#pragma once

// Binary weight file, little-endian throughout (see docs/weight_format.md):
//
//   magic    8 bytes  "VDCNETW\0"
//   version  u32      1
//   dtype    u32      4 = float32, 8 = float64
//   count    u32      number of records
//   record   u32 name_length, name bytes, u32 rank, u64 extents[rank],
//            prod(extents) IEEE-754 values of the declared dtype

#include <filesystem>
#include <string>
#include <vector>

#include "vdcnet/autograd.hpp"

namespace vdcnet {

inline constexpr char kWeightMagic[8] = {'V', 'D', 'C', 'N', 'E', 'T', 'W', '\0'};
inline constexpr std::uint32_t kWeightVersion = 1;

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <class T>
std::vector<char> encode_weights(const std::vector<NamedTensor<T>>& records);
template <class T>
std::vector<NamedTensor<T>> decode_weights(const std::vector<char>& bytes);

template <class T>
void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor<T>>& records);
template <class T>
std::vector<NamedTensor<T>> load_weights(const std::filesystem::path& path);

}  // namespace vdcnet
