#pragma once

// Named tensor collection and its little-endian binary form:
//
//   "EARF" | u32 version | u64 config hash | u32 count |
//   count x ( u32 name length | name bytes | u8 rank | rank x u32 dim | f32 data )

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "earfa/tensor.hpp"

namespace earfa {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

class WeightStore {
 public:
  WeightStore() = default;
  explicit WeightStore(std::uint64_t config_hash) : config_hash_(config_hash) {}

  std::uint64_t config_hash() const { return config_hash_; }
  void set_config_hash(std::uint64_t h) { config_hash_ = h; }

  // Adds or replaces; insertion order is preserved.
  void set(const std::string& name, TensorF t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const TensorF& at(const std::string& name) const;
  TensorF& at(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  const std::vector<std::pair<std::string, TensorF>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, TensorF>>& entries() { return entries_; }

  bool operator==(const WeightStore& other) const;

 private:
  std::uint64_t config_hash_ = 0;
  std::vector<std::pair<std::string, TensorF>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string serialize_weights(const WeightStore& store);
WeightStore deserialize_weights(const std::string& bytes);

void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);
// Also rejects files whose config hash differs from `expected_hash`.
WeightStore load_weights(const std::filesystem::path& path, std::uint64_t expected_hash);

// Tensor record section shared with the optimizer-state sidecar.
void write_tensor_records(std::ostream& os, const std::vector<std::pair<std::string, TensorF>>& tensors);
std::vector<std::pair<std::string, TensorF>> read_tensor_records(std::istream& is);

// Little-endian scalar helpers.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace earfa
