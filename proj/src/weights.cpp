#include "earfa/weights.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace earfa {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'R', 'F'};
constexpr std::uint32_t kMaxNameLength = 1u << 16;

void need(std::istream& is, const char* what) {
  if (!is) throw LoadError(std::string("truncated weight data while reading ") + what);
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t read_u8(std::istream& is) {
  char c = 0;
  is.get(c);
  need(is, "u8");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  need(is, "u32");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | hi << 32;
}

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

void WeightStore::set(const std::string& name, TensorF t) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(t);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(t));
}

const TensorF& WeightStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LoadError("weight store has no tensor '" + name + "'");
  return entries_[it->second].second;
}

TensorF& WeightStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LoadError("weight store has no tensor '" + name + "'");
  return entries_[it->second].second;
}

std::size_t WeightStore::total_elements() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) total += t.numel();
  return total;
}

bool WeightStore::operator==(const WeightStore& other) const {
  if (config_hash_ != other.config_hash_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    for (std::size_t k = 0; k < ta.numel(); ++k) {
      if (std::bit_cast<std::uint32_t>(ta.ptr()[k]) != std::bit_cast<std::uint32_t>(tb.ptr()[k])) return false;
    }
  }
  return true;
}

void write_tensor_records(std::ostream& os, const std::vector<std::pair<std::string, TensorF>>& tensors) {
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u8(os, 4);
    const Shape s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) write_u32(os, std::bit_cast<std::uint32_t>(v));
  }
}

std::vector<std::pair<std::string, TensorF>> read_tensor_records(std::istream& is) {
  const std::uint32_t count = read_u32(is);
  std::vector<std::pair<std::string, TensorF>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(is);
    if (len > kMaxNameLength) throw LoadError("corrupt weight data: tensor name too long");
    std::string name(len, '\0');
    is.read(name.data(), len);
    need(is, "tensor name");
    const std::uint8_t rank = read_u8(is);
    if (rank < 1 || rank > 4) throw LoadError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    // Lower ranks are read as trailing NCHW extents.
    int dims[4] = {1, 1, 1, 1};
    for (int d = 4 - rank; d < 4; ++d) dims[d] = static_cast<int>(read_u32(is));
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    std::vector<float> values(s.numel());
    for (float& v : values) v = std::bit_cast<float>(read_u32(is));
    out.emplace_back(std::move(name), TensorF(s, std::move(values)));
  }
  return out;
}

std::string serialize_weights(const WeightStore& store) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  write_u32(os, kWeightFormatVersion);
  write_u64(os, store.config_hash());
  write_tensor_records(os, store.entries());
  return os.str();
}

WeightStore deserialize_weights(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || !std::equal(magic, magic + 4, kMagic)) throw LoadError("not an EARF weight file (bad magic)");
  const std::uint32_t version = read_u32(is);
  if (version != kWeightFormatVersion) {
    throw LoadError("unsupported weight format version " + std::to_string(version));
  }
  WeightStore store(read_u64(is));
  for (auto& [name, t] : read_tensor_records(is)) {
    if (store.contains(name)) throw LoadError("duplicate tensor '" + name + "' in weight file");
    store.set(name, std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw LoadError("trailing bytes after weight data");
  return store;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_weights(store));
}

WeightStore load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file_bytes(path)); }

WeightStore load_weights(const std::filesystem::path& path, std::uint64_t expected_hash) {
  WeightStore store = load_weights(path);
  if (store.config_hash() != expected_hash) {
    throw LoadError("weight file '" + path.string() + "' was written for a different model config");
  }
  return store;
}

}  // namespace earfa
