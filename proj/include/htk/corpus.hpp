#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "htk/mhtml.hpp"

namespace htk::corpus {

inline constexpr int kFormatVersion = 1;

struct RawDoc {
  std::string doc_id;
  std::optional<std::string> url;
  std::string bytes;
};

struct IngestStats {
  std::size_t documents = 0;
  std::size_t skipped_corrupt = 0;
};

/// Streams the documents under `source` in a fixed order: .html/.htm files by
/// relative path (doc_id = that path), and the HTML responses of .warc and
/// .warc.gz files (doc_id = "<path>@<record offset>"). `source` may also be a
/// single file. Throws IoError when it cannot be read.
IngestStats ingest(const std::filesystem::path& source, const std::function<void(RawDoc)>& sink);

std::vector<RawDoc> ingest_all(const std::filesystem::path& source, IngestStats* stats = nullptr);

struct PipelineOptions {
  std::size_t workers = 1;
  std::size_t shard_size = 10'000;
  std::size_t batch_size = 512;  // documents held in memory per parallel step
};

struct ShardInfo {
  std::string path;  // relative to the output directory
  std::size_t record_count = 0;
};

struct RunSummary {
  std::size_t ingested = 0;
  std::size_t accepted = 0;
  std::size_t skipped_corrupt = 0;
  std::map<std::string, std::size_t> rejects;  // every reject code, zeros included
  std::vector<ShardInfo> shards;

  std::size_t rejected() const;
};

/// Simplifies every document under `source` and writes shard-NNNNN.jsonl
/// files plus manifest.json to `out`. Shard bytes depend only on the input
/// and config, not on the worker count. On a write failure the files of this
/// run are removed and IoError is thrown.
RunSummary run_pipeline(const std::filesystem::path& source, const mhtml::Config& cfg,
                        const PipelineOptions& options, const std::filesystem::path& out);

/// One shard line, fields in schema order.
std::string to_jsonl(const mhtml::Record& record);
mhtml::Record record_from_jsonl(std::string_view line);

/// Records from a .jsonl shard, a manifest.json, or a directory holding one.
std::vector<mhtml::Record> read_records(const std::filesystem::path& path);

/// The shard files a manifest (or its directory) lists, or `path` itself for
/// a .jsonl file.
std::vector<std::filesystem::path> shard_files(const std::filesystem::path& path);

}  // namespace htk::corpus
