#include "vdcnet/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vdcnet {

namespace {

template <class U>
void put(std::vector<char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class T>
auto to_bits(T v) {
  if constexpr (sizeof(T) == 4) return std::bit_cast<std::uint32_t>(v);
  else return std::bit_cast<std::uint64_t>(v);
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("weight file truncated at byte " + std::to_string(pos_));
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <class T>
std::vector<char> encode_weights(const std::vector<NamedTensor<T>>& records) {
  std::vector<char> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  put<std::uint32_t>(out, kWeightVersion);
  put<std::uint32_t>(out, sizeof(T));
  put<std::uint32_t>(out, std::uint32_t(records.size()));
  for (const auto& r : records) {
    put<std::uint32_t>(out, std::uint32_t(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, std::uint32_t(r.value.rank()));
    for (std::size_t e : r.value.shape()) put<std::uint64_t>(out, e);
    for (T v : r.value.values()) put(out, to_bits(v));
  }
  return out;
}

template <class T>
std::vector<NamedTensor<T>> decode_weights(const std::vector<char>& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kWeightMagic)) != std::string(kWeightMagic, sizeof(kWeightMagic))) {
    throw IoError("not a weight file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kWeightVersion) throw IoError("unsupported weight file version " + std::to_string(version));
  const auto width = in.get<std::uint32_t>();
  if (width != sizeof(T)) {
    throw IoError("weight file stores " + std::to_string(width) + "-byte values, expected " +
                  std::to_string(sizeof(T)));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor<T>> records;
  records.reserve(count);
  using Bits = decltype(to_bits(T{}));
  for (std::uint32_t r = 0; r < count; ++r) {
    NamedTensor<T> rec;
    rec.name = in.get_string(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw IoError("implausible tensor rank in weight file: " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(in.get<std::uint64_t>());
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<T>(in.get<Bits>());
    rec.value = Tensor<T>(std::move(shape), std::move(data));
    records.push_back(std::move(rec));
  }
  if (!in.done()) throw IoError("trailing bytes after last weight record");
  return records;
}

template <class T>
void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor<T>>& records) {
  const auto bytes = encode_weights(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

template <class T>
std::vector<NamedTensor<T>> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weight file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_weights<T>(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template std::vector<char> encode_weights(const std::vector<NamedTensor<float>>&);
template std::vector<char> encode_weights(const std::vector<NamedTensor<double>>&);
template std::vector<NamedTensor<float>> decode_weights(const std::vector<char>&);
template std::vector<NamedTensor<double>> decode_weights(const std::vector<char>&);
template void save_weights(const std::filesystem::path&, const std::vector<NamedTensor<float>>&);
template void save_weights(const std::filesystem::path&, const std::vector<NamedTensor<double>>&);
template std::vector<NamedTensor<float>> load_weights(const std::filesystem::path&);
template std::vector<NamedTensor<double>> load_weights(const std::filesystem::path&);

}  // namespace vdcnet
