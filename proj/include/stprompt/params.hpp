#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stprompt/tensor.hpp"

namespace stprompt {

// Named parameter arrays with a frozen flag. Iteration order is insertion
// order so checkpoints and digests are stable.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor tensor;
    bool frozen = false;
  };

  ad::Tensor& add(const std::string& name, ad::Tensor t);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  bool is_frozen(const std::string& name) const;
  // Marks every entry frozen. There is deliberately no unfreeze.
  void freeze_all();
  bool all_frozen() const;

  std::size_t count_params(bool trainable_only = false) const;

  // Serializes all entries to little-endian float32 in entry order.
  std::vector<std::uint8_t> to_blob() const;
  std::string digest() const;  // sha256 of to_blob()

  // Checkpoint file: plain-text manifest (name, shape, frozen flag, byte
  // offset per record) followed by the float32 blob. Loading validates the
  // blob length against the manifest.
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  // Deep copy (fresh storage, same names/frozen flags).
  ParamStore clone() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Copies values from src into dst by name; every name and shape must match
// on both sides. Frozen flags in dst are left untouched.
void copy_parameters(ParamStore& dst, const ParamStore& src);

}  // namespace stprompt
