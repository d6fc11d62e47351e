#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace nvmeguard {

// Plain-text `key=value` file. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile load(const std::filesystem::path& path);
  static KeyValueFile parse(const std::string& text);

  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool contains(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] std::optional<std::string> get(const std::string& key) const;

  [[nodiscard]] std::string get_or(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] double get_double(const std::string& key, double fallback) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  [[nodiscard]] const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace nvmeguard
