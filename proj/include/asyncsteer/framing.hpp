#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace asyncsteer {

/// Frames larger than this are treated as a protocol violation.
inline constexpr std::size_t kMaxFrameBytes = 16u * 1024u * 1024u;

/// 4-byte big-endian unsigned length followed by the payload.
std::string encode_frame(std::string_view payload);

/// Incremental decoder for a byte stream of length-prefixed frames.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_frame = kMaxFrameBytes) : max_frame_(max_frame) {}

  /// Appends bytes and returns every frame completed by them. Throws
  /// ProtocolError when a declared length exceeds the limit.
  std::vector<std::string> feed(std::string_view bytes);

  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::size_t max_frame_;
  std::string buffer_;
};

}  // namespace asyncsteer
