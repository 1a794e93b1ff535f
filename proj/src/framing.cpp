#include "asyncsteer/framing.hpp"

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

std::string encode_frame(std::string_view payload) {
  if (payload.size() > 0xFFFFFFFFull) throw ProtocolError("payload too large for a frame");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out.append(payload);
  return out;
}

std::vector<std::string> FrameDecoder::feed(std::string_view bytes) {
  buffer_.append(bytes);
  std::vector<std::string> frames;
  std::size_t pos = 0;
  while (buffer_.size() - pos >= 4) {
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + pos);
    const std::size_t n = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) |
                          (std::size_t{p[2]} << 8) | std::size_t{p[3]};
    if (n > max_frame_) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds limit");
    if (buffer_.size() - pos - 4 < n) break;
    frames.emplace_back(buffer_.substr(pos + 4, n));
    pos += 4 + n;
  }
  buffer_.erase(0, pos);
  return frames;
}

}  // namespace asyncsteer
