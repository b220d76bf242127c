#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

namespace stprompt {

// FIPS 180-4 SHA-256, used for parameter-blob digests.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset();
  void update(const void* data, std::size_t len);
  // Finalizes and returns the digest as lowercase hex. The object must be
  // reset() before reuse.
  std::string hex_digest();

  static std::string of(const void* data, std::size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex_digest();
  }

 private:
  void process_block(const std::uint8_t* block);

  std::uint32_t state_[8];
  std::uint64_t total_len_ = 0;
  std::uint8_t buffer_[64];
  std::size_t buffer_len_ = 0;
};

}  // namespace stprompt
