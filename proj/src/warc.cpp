#include "htk/warc.hpp"

#include <zlib.h>

#include <charconv>
#include <fstream>
#include <iterator>

#include "htk/error.hpp"
#include "htk/utf8.hpp"

namespace htk::warc {

namespace {

struct Headers {
  std::vector<std::pair<std::string, std::string>> fields;  // lowercased names

  const std::string* get(std::string_view name) const {
    for (const auto& [k, v] : fields) {
      if (k == name) return &v;
    }
    return nullptr;
  }
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && utf8::is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && utf8::is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Parses "Name: value" lines up to the blank line. Returns the offset just
// past the blank line, or npos. Accepts bare LF line ends.
std::size_t parse_headers(std::string_view data, std::size_t pos, Headers& out) {
  for (;;) {
    const std::size_t eol = data.find('\n', pos);
    if (eol == std::string_view::npos) return std::string_view::npos;
    std::string_view line = data.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    if (line.empty()) return pos;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) return std::string_view::npos;
    out.fields.emplace_back(utf8::to_lower_ascii(trim(line.substr(0, colon))),
                            std::string(trim(line.substr(colon + 1))));
  }
}

bool parse_size(std::string_view s, std::size_t& out, int base = 10) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_html_type(std::string_view content_type) {
  const std::string mime = utf8::to_lower_ascii(trim(content_type.substr(0, content_type.find(';'))));
  return mime == "text/html" || mime == "application/xhtml+xml";
}

std::string inflate_all(std::string_view data, int window_bits) {
  z_stream zs{};
  if (inflateInit2(&zs, window_bits) != Z_OK) throw DataError("zlib init failed");
  std::string out;
  char buf[1 << 16];
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt compressed data");
    }
    out.append(buf, sizeof buf - zs.avail_out);
    if (rc == Z_STREAM_END && zs.avail_in > 0 && (window_bits & 16)) {
      // Next gzip member.
      inflateReset(&zs);
      rc = Z_OK;
    }
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("truncated compressed data");
    }
  }
  inflateEnd(&zs);
  return out;
}

// HTTP response block -> HTML payload, or nullopt when it is not HTML.
std::optional<std::string> html_payload(std::string_view block) {
  std::size_t pos = block.find('\n');
  if (!block.starts_with("HTTP/") || pos == std::string_view::npos) throw DataError("missing HTTP status line");
  Headers http;
  pos = parse_headers(block, pos + 1, http);
  if (pos == std::string_view::npos) throw DataError("malformed HTTP headers");
  const std::string* type = http.get("content-type");
  if (!type || !is_html_type(*type)) return std::nullopt;
  std::string body(block.substr(pos));
  if (const auto* te = http.get("transfer-encoding"); te && utf8::to_lower_ascii(*te).find("chunked") != std::string::npos) {
    body = dechunk(body);
  }
  if (const auto* ce = http.get("content-encoding")) {
    const std::string enc = utf8::to_lower_ascii(*ce);
    if (enc == "gzip" || enc == "x-gzip") body = inflate_all(body, 15 + 16);
    else if (enc == "deflate") body = inflate_all(body, 15);
    else if (!enc.empty() && enc != "identity") throw DataError("unsupported content encoding " + enc);
  }
  return body;
}

std::size_t next_record(std::string_view data, std::size_t from) {
  for (std::size_t at = data.find("WARC/", from); at != std::string_view::npos; at = data.find("WARC/", at + 1)) {
    if (at == 0 || data[at - 1] == '\n') return at;
  }
  return std::string_view::npos;
}

}  // namespace

std::string dechunk(std::string_view body) {
  std::string out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t eol = body.find('\n', pos);
    if (eol == std::string_view::npos) throw DataError("truncated chunk header");
    std::string_view line = body.substr(pos, eol - pos);
    line = line.substr(0, line.find(';'));  // chunk extensions
    std::size_t size = 0;
    if (!parse_size(line, size, 16)) throw DataError("bad chunk size");
    pos = eol + 1;
    if (size == 0) return out;  // trailers ignored
    if (body.size() - pos < size) throw DataError("truncated chunk");
    out.append(body.substr(pos, size));
    pos += size;
    if (body.substr(pos, 2) == "\r\n") pos += 2;
    else if (body.substr(pos, 1) == "\n") pos += 1;
    else throw DataError("chunk not terminated");
  }
}

ReadStats for_each_html_response(std::string_view data, const std::function<void(HtmlResponse)>& sink) {
  ReadStats stats;
  std::size_t pos = next_record(data, 0);
  if (pos != 0 && pos != std::string_view::npos) ++stats.corrupt;  // junk before the first record
  if (pos == std::string_view::npos && !trim(data).empty()) ++stats.corrupt;
  while (pos != std::string_view::npos) {
    const std::size_t start = pos;
    try {
      const std::size_t eol = data.find('\n', pos);
      if (eol == std::string_view::npos) throw DataError("truncated version line");
      Headers warc;
      const std::size_t block_start = parse_headers(data, eol + 1, warc);
      if (block_start == std::string_view::npos) throw DataError("malformed WARC headers");
      std::size_t length = 0;
      const std::string* cl = warc.get("content-length");
      if (!cl || !parse_size(*cl, length)) throw DataError("missing Content-Length");
      if (data.size() - block_start < length) throw DataError("truncated block");
      const std::string_view block = data.substr(block_start, length);
      pos = block_start + length;
      while (pos < data.size() && (data[pos] == '\r' || data[pos] == '\n')) ++pos;
      if (pos < data.size() && !data.substr(pos).starts_with("WARC/")) throw DataError("record not followed by a record");

      const std::string* type = warc.get("warc-type");
      std::optional<std::string> body;
      if (type && *type == "response") body = html_payload(block);
      if (!body) {
        ++stats.other;
      } else {
        HtmlResponse r;
        r.offset = start;
        if (const auto* uri = warc.get("warc-target-uri")) r.url = *uri;
        r.body = std::move(*body);
        ++stats.html;
        sink(std::move(r));
      }
      if (pos >= data.size()) break;
    } catch (const DataError&) {
      ++stats.corrupt;
      pos = next_record(data, start + 1);
    }
  }
  return stats;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  if (path.extension() == ".gz") {
    try {
      return inflate_all(data, 15 + 16);
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return data;
}

}  // namespace htk::warc
