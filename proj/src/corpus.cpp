#include "htk/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <variant>

#include "htk/error.hpp"
#include "htk/utf8.hpp"
#include "htk/warc.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace htk::corpus {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum class FileKind { html, warc, other };

FileKind classify_file(const fs::path& path) {
  const std::string name = utf8::to_lower_ascii(path.filename().string());
  if (name.ends_with(".html") || name.ends_with(".htm")) return FileKind::html;
  if (name.ends_with(".warc") || name.ends_with(".warc.gz")) return FileKind::warc;
  return FileKind::other;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return data;
}

void ingest_file(const fs::path& path, const std::string& id, IngestStats& stats,
                 const std::function<void(RawDoc)>& sink) {
  switch (classify_file(path)) {
    case FileKind::html:
      ++stats.documents;
      sink(RawDoc{id, std::nullopt, read_bytes(path)});
      return;
    case FileKind::warc: {
      std::string data;
      try {
        data = warc::read_file(path);
      } catch (const IoError&) {
        throw;
      } catch (const DataError&) {
        ++stats.skipped_corrupt;  // unreadable archive counts as one bad record
        return;
      }
      const auto read = warc::for_each_html_response(data, [&](warc::HtmlResponse r) {
        ++stats.documents;
        sink(RawDoc{id + "@" + std::to_string(r.offset), std::move(r.url), std::move(r.body)});
      });
      stats.skipped_corrupt += read.corrupt;
      return;
    }
    case FileKind::other:
      return;
  }
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%05zu.jsonl", index);
  return buf;
}

}  // namespace

std::size_t RunSummary::rejected() const {
  std::size_t n = 0;
  for (const auto& [code, count] : rejects) n += count;
  return n;
}

IngestStats ingest(const fs::path& source, const std::function<void(RawDoc)>& sink) {
  std::error_code ec;
  const auto status = fs::status(source, ec);
  if (ec || !fs::exists(status)) throw IoError("cannot read " + source.string());
  IngestStats stats;
  if (!fs::is_directory(status)) {
    ingest_file(source, source.filename().generic_string(), stats, sink);
    return stats;
  }
  std::vector<std::pair<std::string, fs::path>> files;
  fs::recursive_directory_iterator it(source, fs::directory_options::none, ec);
  if (ec) throw IoError("cannot list " + source.string() + ": " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw IoError("cannot list " + source.string() + ": " + ec.message());
    if (!it->is_regular_file(ec) || classify_file(it->path()) == FileKind::other) continue;
    files.emplace_back(it->path().lexically_relative(source).generic_string(), it->path());
  }
  if (ec) throw IoError("cannot list " + source.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  for (const auto& [id, path] : files) ingest_file(path, id, stats, sink);
  return stats;
}

std::vector<RawDoc> ingest_all(const fs::path& source, IngestStats* stats) {
  std::vector<RawDoc> docs;
  const IngestStats s = ingest(source, [&](RawDoc d) { docs.push_back(std::move(d)); });
  if (stats) *stats = s;
  return docs;
}

std::string to_jsonl(const mhtml::Record& r) {
  const json row = {{"doc_id", r.doc_id},
                    {"url", r.url ? json(*r.url) : json(nullptr)},
                    {"mhtml", r.mhtml},
                    {"raw_chars", r.raw_chars},
                    {"mhtml_chars", r.mhtml_chars},
                    {"text_chars", r.text_chars},
                    {"text_ratio", r.text_ratio},
                    {"lang", r.lang ? json(*r.lang) : json(nullptr)}};
  return row.dump();
}

mhtml::Record record_from_jsonl(std::string_view line) {
  try {
    const json row = json::parse(line);
    mhtml::Record r;
    r.doc_id = row.at("doc_id").get<std::string>();
    if (!row.at("url").is_null()) r.url = row.at("url").get<std::string>();
    r.mhtml = row.at("mhtml").get<std::string>();
    r.raw_chars = row.at("raw_chars").get<std::size_t>();
    r.mhtml_chars = row.at("mhtml_chars").get<std::size_t>();
    r.text_chars = row.at("text_chars").get<std::size_t>();
    r.text_ratio = row.at("text_ratio").get<double>();
    if (!row.at("lang").is_null()) r.lang = row.at("lang").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad record: ") + e.what());
  }
}

std::vector<fs::path> shard_files(const fs::path& path) {
  fs::path manifest = path;
  if (fs::is_directory(path)) manifest = path / "manifest.json";
  else if (path.extension() == ".jsonl") return {path};
  json doc;
  try {
    doc = json::parse(read_bytes(manifest));
    std::vector<fs::path> out;
    for (const auto& s : doc.at("shards")) out.push_back(manifest.parent_path() / s.at("path").get<std::string>());
    return out;
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
}

std::vector<mhtml::Record> read_records(const fs::path& path) {
  std::vector<mhtml::Record> records;
  for (const auto& shard : shard_files(path)) {
    std::ifstream in(shard, std::ios::binary);
    if (!in) throw IoError("cannot read " + shard.string());
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      try {
        records.push_back(record_from_jsonl(line));
      } catch (const DataError& e) {
        throw DataError(shard.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }
  return records;
}

RunSummary run_pipeline(const fs::path& source, const mhtml::Config& cfg, const PipelineOptions& options,
                        const fs::path& out) {
  cfg.validate();
  if (options.workers == 0) throw ConfigError("workers must be >= 1");
  if (options.shard_size == 0) throw ConfigError("shard size must be >= 1");

  RunSummary summary;
  for (const auto code : mhtml::kAllRejectCodes) summary.rejects[std::string(mhtml::to_string(code))] = 0;

  std::vector<mhtml::Record> accepted;
  std::vector<RawDoc> batch;
  std::vector<mhtml::Outcome> outcomes;
  auto flush = [&] {
    outcomes.assign(batch.size(), mhtml::Outcome{});
    detail::parallel_for(batch.size(), options.workers, [&](std::size_t i) {
      try {
        outcomes[i] = mhtml::simplify_bytes(batch[i].bytes, cfg, batch[i].doc_id, batch[i].url);
      } catch (const std::exception& e) {
        outcomes[i] = mhtml::RejectReason{mhtml::RejectCode::parse_error, e.what()};
      }
    });
    for (auto& outcome : outcomes) {
      if (auto* record = std::get_if<mhtml::Record>(&outcome)) {
        accepted.push_back(std::move(*record));
      } else {
        ++summary.rejects[std::string(mhtml::to_string(std::get<mhtml::RejectReason>(outcome).code))];
      }
    }
    batch.clear();
  };
  const IngestStats ingested = ingest(source, [&](RawDoc doc) {
    batch.push_back(std::move(doc));
    if (batch.size() >= std::max<std::size_t>(options.batch_size, 1)) flush();
  });
  flush();

  summary.ingested = ingested.documents + ingested.skipped_corrupt;
  summary.skipped_corrupt = ingested.skipped_corrupt;
  summary.accepted = accepted.size();
  std::sort(accepted.begin(), accepted.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  // Stale shards from an earlier, larger run would otherwise linger.
  for (const auto& entry : fs::directory_iterator(out, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("shard-") && name.ends_with(".jsonl")) fs::remove(entry.path(), ec);
  }

  std::vector<fs::path> written;
  try {
    for (std::size_t begin = 0, index = 0; begin < accepted.size(); begin += options.shard_size, ++index) {
      const std::size_t end = std::min(accepted.size(), begin + options.shard_size);
      std::string content;
      for (std::size_t i = begin; i < end; ++i) content += to_jsonl(accepted[i]) + "\n";
      const std::string name = shard_name(index);
      written.push_back(out / name);
      write_file(out / name, content);
      summary.shards.push_back({name, end - begin});
    }
    json shards = json::array();
    for (const auto& s : summary.shards) shards.push_back({{"path", s.path}, {"record_count", s.record_count}});
    json rejects = json::object();
    for (const auto& [code, count] : summary.rejects) rejects[code] = count;
    const json manifest = {{"version", kFormatVersion}, {"shards", std::move(shards)}, {"rejects", std::move(rejects)}};
    written.push_back(out / "manifest.json");
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
  } catch (const IoError&) {
    for (const auto& path : written) fs::remove(path, ec);
    throw;
  }
  return summary;
}

}  // namespace htk::corpus
