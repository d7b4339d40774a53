#include "reid/embedding_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "reid/error.hpp"

namespace reid {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T)) throw Error(Errc::FormatError, "truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return v;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10ffff)) ||
        (cp >= 0xd800 && cp <= 0xdfff)) {
      return false;
    }
    i += len;
  }
  return true;
}

}  // namespace

std::string encode_mreid(const EmbeddingFile& file) {
  if (file.values.size() != file.ids.size() * file.dim) throw Error(Errc::DimensionMismatch, "values size");
  if (file.ids.size() > std::numeric_limits<std::uint32_t>::max() ||
      file.dim > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::FormatError, "too large for u32 header");
  }
  std::string out(kMreidMagic);
  out.reserve(16 + file.values.size() * 4 + file.ids.size() * 16);
  put_le(out, static_cast<std::uint32_t>(file.ids.size()));
  put_le(out, static_cast<std::uint32_t>(file.dim));
  for (float v : file.values) put_le(out, std::bit_cast<std::uint32_t>(v));
  for (const auto& id : file.ids) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) throw Error(Errc::FormatError, "id too long");
    if (!valid_utf8(id)) throw Error(Errc::FormatError, "id is not valid UTF-8");
    put_le(out, static_cast<std::uint16_t>(id.size()));
    out += id;
  }
  return out;
}

EmbeddingFile decode_mreid(std::string_view bytes) {
  if (bytes.size() < kMreidMagic.size() || bytes.substr(0, kMreidMagic.size()) != kMreidMagic) {
    throw Error(Errc::FormatError, "bad magic");
  }
  std::size_t pos = kMreidMagic.size();
  const auto rows = get_le<std::uint32_t>(bytes, pos);
  const auto dim = get_le<std::uint32_t>(bytes, pos);
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * dim;
  if ((bytes.size() - pos) / 4 < count) throw Error(Errc::FormatError, "truncated matrix");

  EmbeddingFile file;
  file.dim = dim;
  file.values.resize(static_cast<std::size_t>(count));
  for (auto& v : file.values) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
  file.ids.reserve(rows);
  for (std::uint32_t r = 0; r < rows; ++r) {
    const auto len = get_le<std::uint16_t>(bytes, pos);
    if (bytes.size() - pos < len) throw Error(Errc::FormatError, "truncated id table");
    std::string id(bytes.substr(pos, len));
    if (!valid_utf8(id)) throw Error(Errc::FormatError, "id is not valid UTF-8");
    file.ids.push_back(std::move(id));
    pos += len;
  }
  if (pos != bytes.size()) throw Error(Errc::FormatError, "trailing bytes");
  return file;
}

EmbeddingFile parse_embedding_jsonl(std::string_view text) {
  EmbeddingFile file;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("id") || !obj.contains("vector") ||
        !obj["id"].is_string() || !obj["vector"].is_array()) {
      throw Error(Errc::FormatError, "embedding JSONL line " + std::to_string(line_no));
    }
    const auto& vec = obj["vector"];
    if (!have_dim) {
      file.dim = vec.size();
      have_dim = true;
    } else if (vec.size() != file.dim) {
      throw Error(Errc::DimensionMismatch, obj["id"].get<std::string>());
    }
    for (const auto& x : vec) {
      if (!x.is_number()) throw Error(Errc::FormatError, "embedding JSONL line " + std::to_string(line_no));
      file.values.push_back(x.get<float>());
    }
    file.ids.push_back(obj["id"].get<std::string>());
  }
  return file;
}

std::string encode_embedding_jsonl(const EmbeddingFile& file) {
  std::string out;
  for (std::size_t r = 0; r < file.ids.size(); ++r) {
    const auto row = file.row(r);
    nlohmann::json obj = {{"id", file.ids[r]}, {"vector", std::vector<float>(row.begin(), row.end())}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= kMreidMagic.size() && std::string_view(bytes).substr(0, kMreidMagic.size()) == kMreidMagic) {
    return decode_mreid(bytes);
  }
  return parse_embedding_jsonl(bytes);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  const bool jsonl = path.extension() == ".jsonl";
  write_file(path, jsonl ? encode_embedding_jsonl(file) : encode_mreid(file));
}

}  // namespace reid
