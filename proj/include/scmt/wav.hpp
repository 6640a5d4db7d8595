#ifndef SCMT_WAV_HPP_
#define SCMT_WAV_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

// 16-bit PCM mono WAV I/O. This is the only audio container the toolchain
// reads or writes.

namespace wav_detail {
inline void put_u32(std::string& s, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  s.append(b, 4);
}
inline void put_u16(std::string& s, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  s.append(b, 2);
}
inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace wav_detail

inline void write_wav(const std::string& path, const std::vector<float>& samples,
                      uint32_t sample_rate) {
  using namespace wav_detail;
  std::string out;
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.append("data");
  put_u32(out, data_bytes);
  for (float x : samples) {
    float c = x < -1.0f ? -1.0f : (x > 1.0f ? 1.0f : x);
    int v = static_cast<int>(std::lrintf(c * 32767.0f));
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_wav: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_wav: short write to " + path);
}

struct WavData {
  std::vector<float> samples;
  uint32_t sample_rate = 0;
};

inline WavData read_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError("read_wav: not a RIFF/WAVE file: " + path);

  WavData out;
  uint16_t channels = 0, bits = 0, format = 0;
  size_t pos = 12;
  bool have_fmt = false, have_data = false;
  while (pos + 8 <= buf.size()) {
    uint32_t chunk_size = get_u32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    size_t avail = buf.size() - pos - 8;
    if (chunk_size > avail) chunk_size = static_cast<uint32_t>(avail);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && chunk_size >= 16) {
      format = get_u16(body);
      channels = get_u16(body + 2);
      out.sample_rate = get_u32(body + 4);
      bits = get_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw IoError("read_wav: data chunk before fmt in " + path);
      if (format != 1 || bits != 16)
        throw IoError("read_wav: only 16-bit PCM supported: " + path);
      if (channels != 1) throw IoError("read_wav: only mono supported: " + path);
      size_t n = chunk_size / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t v = static_cast<int16_t>(get_u16(body + 2 * i));
        out.samples[i] = static_cast<float>(v) / 32767.0f;
      }
      have_data = true;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }
  if (!have_data) throw IoError("read_wav: no data chunk in " + path);
  return out;
}

}  // namespace scmt

#endif  // SCMT_WAV_HPP_
