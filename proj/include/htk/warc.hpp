#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace htk::warc {

struct HtmlResponse {
  std::size_t offset = 0;  // record start in the decompressed stream
  std::optional<std::string> url;
  std::string body;  // HTTP payload with transfer and content encodings removed
};

struct ReadStats {
  std::size_t html = 0;
  std::size_t other = 0;    // well-formed records that are not HTML responses
  std::size_t corrupt = 0;  // records that could not be decoded
};

/// Walks the records of an uncompressed WARC stream and hands every response
/// whose HTTP Content-Type is HTML to `sink`. A damaged record is counted and
/// skipped; reading resumes at the next "WARC/" version line.
ReadStats for_each_html_response(std::string_view data, const std::function<void(HtmlResponse)>& sink);

/// File contents; .gz files (including multi-member archives) are inflated.
/// Throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Decodes an HTTP chunked body. Throws DataError on malformed framing.
std::string dechunk(std::string_view body);

}  // namespace htk::warc
