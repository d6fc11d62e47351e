#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvmeguard {

enum class Opcode : std::uint8_t { Read = 0, Write = 1 };

enum class Label : std::uint8_t { Benign = 0, Ransomware = 1, Unlabeled = 2 };

struct Command {
  double timestamp = 0.0;  // seconds
  Opcode opcode = Opcode::Read;
  std::uint64_t offset = 0;  // bytes
  std::uint64_t size = 0;    // bytes
  Label label = Label::Unlabeled;

  [[nodiscard]] std::uint64_t end() const { return offset + size; }
  [[nodiscard]] bool is_read() const { return opcode == Opcode::Read; }
  [[nodiscard]] bool is_write() const { return opcode == Opcode::Write; }

  bool operator==(const Command&) const = default;
};

struct Stream {
  std::string stream_id;
  std::uint64_t disk_capacity = 0;
  std::vector<Command> commands;
  std::optional<std::string> family;

  bool operator==(const Stream&) const = default;
};

// Thrown for malformed trace input. `line` is 1-based (the header is line 1).
class TraceError : public std::runtime_error {
 public:
  TraceError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}

  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Violation {
  std::optional<std::size_t> command_index;
  std::string message;
};

// Parses the trace CSV. Capacity bounds every command's [offset, offset+size).
Stream parse_trace(const std::filesystem::path& path, std::uint64_t capacity);

// Parses the CSV and reads capacity/family from the `<path>.meta` sidecar.
Stream load_trace(const std::filesystem::path& path);

// Writes the CSV and its `.meta` sidecar.
void serialize_trace(const Stream& stream, const std::filesystem::path& path);

std::vector<Violation> validate_stream(const Stream& stream);

std::filesystem::path meta_path(const std::filesystem::path& trace);

char opcode_letter(Opcode op);

// Shortest decimal representation that parses back to the same double.
std::string format_seconds(double value);

}  // namespace nvmeguard
