#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace co2rl {

// Incremental SHA-256 (FIPS 180-4), used for dataset digests and config
// fingerprints.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, std::size_t len);
    // finalizes and returns the 64-char lowercase hex digest
    std::string hex_digest();

    static std::string of_bytes(const void* data, std::size_t len);
    static std::string of_string(const std::string& s);
    static std::string of_file(const std::string& path);

private:
    void process_block(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t bit_count_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
};

}  // namespace co2rl
