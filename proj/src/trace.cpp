#include "nvmeguard/trace.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string_view>

#include "nvmeguard/kv_file.hpp"

namespace nvmeguard {
namespace {

constexpr std::string_view kHeader = "timestamp,opcode,offset,size,label";

// Line numbers count the header; rows count commands.
std::string where(std::size_t line) {
  return "line " + std::to_string(line) + " (row " + std::to_string(line - 1) + "): ";
}

template <typename T>
T parse_number(std::string_view field, const char* what, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw TraceError(where(line) + "invalid " + what + " '" +
                         std::string(field) + "'",
                     line);
  }
  return value;
}

Command parse_row(std::string_view row, std::size_t line) {
  std::array<std::string_view, 5> fields;
  std::size_t n = 0;
  std::size_t start = 0;
  while (true) {
    const auto comma = row.find(',', start);
    if (n == fields.size()) {
      throw TraceError(where(line) + "too many fields", line);
    }
    fields[n++] = row.substr(start, comma == std::string_view::npos ? row.npos : comma - start);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (n != fields.size()) {
    throw TraceError(where(line) + "expected 5 fields, got " +
                         std::to_string(n),
                     line);
  }

  Command c;
  c.timestamp = parse_number<double>(fields[0], "timestamp", line);
  if (!std::isfinite(c.timestamp) || c.timestamp < 0.0) {
    throw TraceError(where(line) + "timestamp must be non-negative", line);
  }
  if (fields[1] == "R") {
    c.opcode = Opcode::Read;
  } else if (fields[1] == "W") {
    c.opcode = Opcode::Write;
  } else {
    throw TraceError(where(line) + "unknown opcode '" +
                         std::string(fields[1]) + "'",
                     line);
  }
  c.offset = parse_number<std::uint64_t>(fields[2], "offset", line);
  c.size = parse_number<std::uint64_t>(fields[3], "size", line);
  if (c.size == 0) {
    throw TraceError(where(line) + "size must be positive", line);
  }
  if (fields[4].empty()) {
    c.label = Label::Unlabeled;
  } else if (fields[4] == "0") {
    c.label = Label::Benign;
  } else if (fields[4] == "1") {
    c.label = Label::Ransomware;
  } else {
    throw TraceError(where(line) + "invalid label '" +
                         std::string(fields[4]) + "'",
                     line);
  }
  return c;
}

}  // namespace

char opcode_letter(Opcode op) { return op == Opcode::Read ? 'R' : 'W'; }

std::string format_seconds(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

std::filesystem::path meta_path(const std::filesystem::path& trace) {
  auto p = trace;
  p += ".meta";
  return p;
}

Stream parse_trace(const std::filesystem::path& path, std::uint64_t capacity) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open " + path.string(), 0);

  Stream stream;
  stream.stream_id = path.stem().string();
  stream.disk_capacity = capacity;

  std::string line;
  if (!std::getline(in, line)) throw TraceError("missing header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw TraceError("unexpected header '" + line + "'", 1);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Command c = parse_row(line, lineno);
    if (!stream.commands.empty() && c.timestamp < stream.commands.back().timestamp) {
      throw TraceError(where(lineno) + "timestamp decreases", lineno);
    }
    if (c.offset > capacity || c.size > capacity - c.offset) {
      throw TraceError(where(lineno) + "range exceeds disk capacity",
                       lineno);
    }
    stream.commands.push_back(c);
  }
  return stream;
}

Stream load_trace(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("cannot open " + path.string());
  const auto meta = KeyValueFile::load(meta_path(path));
  const auto capacity = meta.get_u64("capacity_bytes", 0);
  if (capacity == 0) throw TraceError("missing capacity_bytes in " + meta_path(path).string(), 0);
  Stream s = parse_trace(path, capacity);
  if (auto fam = meta.get("family"); fam && !fam->empty()) s.family = *fam;
  return s;
}

void serialize_trace(const Stream& stream, const std::filesystem::path& path) {
  {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << kHeader << '\n';
    for (const auto& c : stream.commands) {
      out << format_seconds(c.timestamp) << ',' << opcode_letter(c.opcode) << ',' << c.offset
          << ',' << c.size << ',';
      if (c.label == Label::Benign) out << '0';
      if (c.label == Label::Ransomware) out << '1';
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  KeyValueFile meta;
  meta.set("capacity_bytes", std::to_string(stream.disk_capacity));
  if (stream.family) meta.set("family", *stream.family);
  meta.save(meta_path(path));
}

std::vector<Violation> validate_stream(const Stream& stream) {
  std::vector<Violation> out;
  if (stream.disk_capacity == 0) out.push_back({std::nullopt, "disk capacity is zero"});
  for (std::size_t i = 0; i < stream.commands.size(); ++i) {
    const auto& c = stream.commands[i];
    if (c.size == 0) out.push_back({i, "size is zero"});
    if (!std::isfinite(c.timestamp) || c.timestamp < 0.0) {
      out.push_back({i, "timestamp is negative or not finite"});
    }
    if (c.offset > stream.disk_capacity || c.size > stream.disk_capacity - c.offset) {
      out.push_back({i, "range exceeds disk capacity"});
    }
    if (i > 0 && c.timestamp < stream.commands[i - 1].timestamp) {
      out.push_back({i, "timestamp decreases"});
    }
  }
  return out;
}

}  // namespace nvmeguard
