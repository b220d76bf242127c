#include "stprompt/params.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "stprompt/sha256.hpp"

namespace stprompt {

ad::Tensor& ParamStore::add(const std::string& name, ad::Tensor t) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(t), false});
  return entries_.back().tensor;
}

ad::Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

bool ParamStore::is_frozen(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].frozen;
}

void ParamStore::freeze_all() {
  for (auto& e : entries_) {
    e.frozen = true;
    // Skipping weight-gradient work for frozen tensors; they are excluded
    // from updates either way.
    e.tensor.set_requires_grad(false);
  }
}

bool ParamStore::all_frozen() const {
  for (const auto& e : entries_) {
    if (!e.frozen) return false;
  }
  return !entries_.empty();
}

std::size_t ParamStore::count_params(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (trainable_only && e.frozen) continue;
    n += e.tensor.size();
  }
  return n;
}

std::vector<std::uint8_t> ParamStore::to_blob() const {
  std::vector<std::uint8_t> blob;
  for (const auto& e : entries_) {
    for (double v : e.tensor.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      blob.push_back(std::uint8_t(bits));
      blob.push_back(std::uint8_t(bits >> 8));
      blob.push_back(std::uint8_t(bits >> 16));
      blob.push_back(std::uint8_t(bits >> 24));
    }
  }
  return blob;
}

std::string ParamStore::digest() const {
  const auto blob = to_blob();
  return Sha256::of(blob.data(), blob.size());
}

void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out << "stckpt 1\n" << entries_.size() << "\n";
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    out << e.name << " " << e.tensor.ndim();
    for (auto d : e.tensor.shape()) out << " " << d;
    out << " " << (e.frozen ? 1 : 0) << " " << offset << "\n";
    offset += e.tensor.size() * 4;
  }
  out << "blob " << offset << "\n";
  const auto blob = to_blob();
  out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "stckpt" || version != 1) throw DataError("not a checkpoint file: " + path);
  std::size_t n = 0;
  in >> n;

  struct Rec {
    std::string name;
    ad::Shape shape;
    bool frozen;
    std::size_t offset;
  };
  std::vector<Rec> recs(n);
  std::size_t expected = 0;
  for (auto& r : recs) {
    std::size_t ndim = 0;
    in >> r.name >> ndim;
    r.shape.resize(ndim);
    for (auto& d : r.shape) in >> d;
    int frozen = 0;
    in >> frozen >> r.offset;
    r.frozen = frozen != 0;
    if (r.offset != expected) throw DataError("checkpoint manifest offset mismatch at " + r.name);
    expected += ad::shape_size(r.shape) * 4;
  }
  std::string blob_tag;
  std::size_t blob_len = 0;
  in >> blob_tag >> blob_len;
  if (blob_tag != "blob") throw DataError("checkpoint manifest missing blob record");
  if (blob_len != expected) throw DataError("checkpoint blob length disagrees with manifest");
  in.ignore(1, '\n');

  std::vector<std::uint8_t> blob(blob_len);
  in.read(reinterpret_cast<char*>(blob.data()), std::streamsize(blob_len));
  if (std::size_t(in.gcount()) != blob_len) throw DataError("checkpoint blob truncated");

  ParamStore store;
  std::size_t pos = 0;
  for (const auto& r : recs) {
    const std::size_t count = ad::shape_size(r.shape);
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = std::uint32_t(blob[pos]) | (std::uint32_t(blob[pos + 1]) << 8) |
                           (std::uint32_t(blob[pos + 2]) << 16) |
                           (std::uint32_t(blob[pos + 3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = static_cast<double>(f);
      pos += 4;
    }
    auto& t = store.add(r.name, ad::Tensor(r.shape, std::move(data)));
    if (r.frozen) {
      store.entries_.back().frozen = true;
      t.set_requires_grad(false);
    }
  }
  return store;
}

void copy_parameters(ParamStore& dst, const ParamStore& src) {
  if (dst.entries().size() != src.entries().size()) {
    throw ContractError("parameter copy: entry counts differ");
  }
  for (auto& e : dst.entries()) {
    const auto& s = src.get(e.name);
    if (s.shape() != e.tensor.shape()) {
      throw ContractError("parameter copy: shape mismatch for " + e.name);
    }
    e.tensor.data() = s.data();
  }
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& e : entries_) {
    copy.add(e.name, e.tensor.clone());
    copy.entries_.back().frozen = e.frozen;
    copy.entries_.back().tensor.set_requires_grad(!e.frozen);
  }
  return copy;
}

}  // namespace stprompt
