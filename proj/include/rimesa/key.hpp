#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace rimesa {

enum class KeyKind : std::uint8_t { Pose = 0, Landmark = 1 };

inline constexpr std::int32_t kEnvironment = -1;

// Variable identifier. Landmarks belong to the environment (owner -1).
struct Key {
  std::int32_t owner = 0;
  KeyKind kind = KeyKind::Pose;
  std::uint32_t index = 0;

  auto operator<=>(const Key&) const = default;

  bool is_pose() const { return kind == KeyKind::Pose; }
  bool is_landmark() const { return kind == KeyKind::Landmark; }
  bool is_environment() const { return owner == kEnvironment; }
};

inline Key pose_key(std::int32_t robot, std::uint32_t index) { return {robot, KeyKind::Pose, index}; }
inline Key landmark_key(std::uint32_t id) { return {kEnvironment, KeyKind::Landmark, id}; }

// "r<robot>:<idx>" for poses, "l<id>" for landmarks.
inline std::string to_string(const Key& k) {
  if (k.is_landmark()) return "l" + std::to_string(k.index);
  return "r" + std::to_string(k.owner) + ":" + std::to_string(k.index);
}

inline Key parse_key(const std::string& s) {
  auto fail = [&] { return std::invalid_argument("malformed key '" + s + "'"); };
  if (s.size() < 2) throw fail();
  std::size_t used = 0;
  try {
    if (s[0] == 'l') {
      const unsigned long id = std::stoul(s.substr(1), &used);
      if (used != s.size() - 1 || s[1] == '-') throw fail();
      return landmark_key(static_cast<std::uint32_t>(id));
    }
    if (s[0] == 'r') {
      const auto colon = s.find(':');
      if (colon == std::string::npos) throw fail();
      const std::string rs = s.substr(1, colon - 1), is = s.substr(colon + 1);
      if (rs.empty() || is.empty() || is[0] == '-' || rs[0] == '-') throw fail();
      const long robot = std::stol(rs, &used);
      if (used != rs.size()) throw fail();
      const unsigned long idx = std::stoul(is, &used);
      if (used != is.size()) throw fail();
      return pose_key(static_cast<std::int32_t>(robot), static_cast<std::uint32_t>(idx));
    }
  } catch (const std::logic_error&) {
    throw fail();
  }
  throw fail();
}

}  // namespace rimesa

template <>
struct std::hash<rimesa::Key> {
  std::size_t operator()(const rimesa::Key& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.owner);
    h = (h << 32) ^ (static_cast<std::uint64_t>(k.kind) << 31) ^ k.index;
    return std::hash<std::uint64_t>{}(h);
  }
};
