#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace glyco {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian");

// Container layout shared by the dataset and checkpoint files:
//   [u64 manifest byte length][manifest JSON, UTF-8][payload]
// The manifest records byte offsets into the payload. JSON objects serialize
// with sorted keys, so identical content is byte-identical on disk.
class BlockWriter {
 public:
  // Returns the payload byte offset the values were placed at.
  std::uint64_t add_f64(const std::vector<double>& values) {
    std::uint64_t off = payload_.size();
    std::size_t n = values.size() * sizeof(double);
    payload_.resize(payload_.size() + n);
    std::memcpy(payload_.data() + off, values.data(), n);
    return off;
  }

  std::uint64_t add_bits(const std::vector<std::uint8_t>& flags) {
    std::uint64_t off = payload_.size();
    std::size_t nbytes = (flags.size() + 7) / 8;
    payload_.resize(payload_.size() + nbytes, 0);
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (flags[i]) payload_[off + i / 8] |= std::uint8_t(1u << (i % 8));
    return off;
  }

  void write(const std::string& path, const nlohmann::json& manifest) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    std::string m = manifest.dump();
    std::uint64_t len = m.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(m.data(), std::streamsize(m.size()));
    os.write(reinterpret_cast<const char*>(payload_.data()),
             std::streamsize(payload_.size()));
    if (!os) throw std::runtime_error("short write to " + path);
  }

 private:
  std::vector<char> payload_;
};

class BlockReader {
 public:
  explicit BlockReader(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string m(len, '\0');
    is.read(m.data(), std::streamsize(len));
    if (!is) throw std::runtime_error("truncated manifest in " + path);
    manifest_ = nlohmann::json::parse(m);
    payload_.assign(std::istreambuf_iterator<char>(is),
                    std::istreambuf_iterator<char>());
  }

  const nlohmann::json& manifest() const { return manifest_; }

  std::vector<double> read_f64(std::uint64_t offset, std::size_t count) const {
    if (offset + count * sizeof(double) > payload_.size())
      throw std::runtime_error("block out of range");
    std::vector<double> out(count);
    std::memcpy(out.data(), payload_.data() + offset, count * sizeof(double));
    return out;
  }

  std::vector<std::uint8_t> read_bits(std::uint64_t offset,
                                      std::size_t count) const {
    std::size_t nbytes = (count + 7) / 8;
    if (offset + nbytes > payload_.size())
      throw std::runtime_error("bit block out of range");
    std::vector<std::uint8_t> out(count);
    for (std::size_t i = 0; i < count; ++i)
      out[i] = (payload_[offset + i / 8] >> (i % 8)) & 1u;
    return out;
  }

 private:
  nlohmann::json manifest_;
  std::vector<char> payload_;
};

}  // namespace glyco
