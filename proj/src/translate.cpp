#include <regex>

#include "lims/extractor.hpp"

namespace lims {

TranslateError::TranslateError(Kind kind, std::size_t line, const std::string& detail)
    : Error(kind == Kind::ParseError ? "line " + std::to_string(line) + ": " + detail : detail),
      kind_(kind),
      line_(line) {}

namespace {

bool is_blank(std::string_view line) { return line.find_first_not_of(" \t") == std::string_view::npos; }

std::vector<std::string> split_row(std::string_view line, const Delimiter& d) {
  std::vector<std::string> out;
  if (d.whitespace) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i == line.size()) break;
      auto j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.emplace_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    auto at = line.find(d.ch, start);
    out.push_back(trim(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

// "key: value" or "key = value"; keys start with a letter.
const std::regex& header_line() {
  static const std::regex re(R"(^\s*([A-Za-z][^:=]*?)\s*[:=]\s*(.*?)\s*$)");
  return re;
}

struct Block {
  std::vector<MetaDatum> metadata;
  std::vector<std::vector<std::string>> rows;
  bool empty() const { return metadata.empty() && rows.empty(); }
};

}  // namespace

Translation translate(std::string_view bytes, const TranslationConfig& cfg, const TranslationContext& ctx) {
  Translation out;
  auto& doc = out.doc;
  doc.role = DocRole::archive;
  doc.timestamp = ctx.timestamp;
  doc.kind = cfg.kind;
  doc.measurement_type = NamedRef{std::nullopt, cfg.measurement_type};
  doc.tool = NamedRef{ctx.tool.id, cfg.tool_name};
  doc.operator_id = ctx.operator_id;
  doc.data_file_link = FileLink{Timestamp::from(ctx.mtime), ctx.archive_path};

  if (cfg.format == FileFormat::BinaryOpaque) {
    Aggregate a;
    a.metadata.push_back(MetaDatum{"filename", ctx.file_name, "-", std::nullopt, {}});
    a.metadata.push_back(MetaDatum{"size_bytes", std::to_string(ctx.size), "bytes", std::nullopt, {}});
    a.metadata.push_back(MetaDatum{"mtime", Timestamp::from(ctx.mtime).str(), "-", std::nullopt, {}});
    doc.aggregates.push_back(std::move(a));
    return out;
  }

  const bool headers = cfg.format == FileFormat::HeaderPlusColumns;
  const bool split = cfg.aggregate_rule == AggregateRule::SplitOnBlankLine;
  auto lines = split_lines(bytes);
  std::vector<Block> blocks(1);
  for (std::size_t i = static_cast<std::size_t>(cfg.skip_lines); i < lines.size(); ++i) {
    const auto& line = lines[i];
    const auto lineno = i + 1;
    if (is_blank(line)) {
      if (split && !blocks.back().empty()) blocks.emplace_back();
      continue;
    }
    std::smatch m;
    if (headers && std::regex_match(line, m, header_line())) {
      auto key = m[1].str();
      auto value = m[2].str();
      for (const auto& rule : cfg.header_rules) {
        if (!std::regex_search(key, rule.key_regex)) continue;
        MetaDatum d{rule.metadata_name, std::nullopt, rule.units, std::nullopt, {}};
        (rule.as_comment ? d.comments : d.value) = value;
        blocks.back().metadata.push_back(std::move(d));
        break;
      }
      continue;
    }
    auto fields = split_row(line, cfg.delimiter);
    if (fields.size() != cfg.columns.size()) {
      if (cfg.lenient) {
        ++out.skipped_rows;
        continue;
      }
      throw TranslateError(TranslateError::Kind::ParseError, lineno,
                           "expected " + std::to_string(cfg.columns.size()) + " columns, found " +
                               std::to_string(fields.size()));
    }
    blocks.back().rows.push_back(std::move(fields));
  }

  for (auto& b : blocks) {
    if (b.empty()) continue;
    Aggregate a;
    a.metadata = std::move(b.metadata);
    for (std::size_t c = 0; c < cfg.columns.size(); ++c) {
      DataSeries s;
      s.descriptor = Descriptor{cfg.columns[c].name, cfg.columns[c].units};
      s.data.reserve(b.rows.size());
      for (auto& row : b.rows) s.data.push_back(std::move(row[c]));
      a.series.push_back(std::move(s));
    }
    doc.aggregates.push_back(std::move(a));
  }
  return out;
}

std::string regenerate(const DataDocument& doc, const TranslationConfig& cfg) {
  if (cfg.format == FileFormat::BinaryOpaque)
    throw TranslateError(TranslateError::Kind::UnsupportedFormat, 0,
                         "tool '" + cfg.tool_name + "' is BinaryOpaque; there is no table to regenerate");
  const char delim = cfg.delimiter.canonical();
  std::string out;
  bool first = true;
  for (const auto& agg : doc.aggregates) {
    if (agg.series.empty()) continue;
    auto n = agg.series.front().data.size();
    for (const auto& s : agg.series)
      if (s.data.size() != n)
        throw TranslateError(TranslateError::Kind::UnequalLengths, 0,
                             "series '" + s.descriptor.name + "' has " + std::to_string(s.data.size()) +
                                 " values, expected " + std::to_string(n));
    if (!first) out += '\n';
    first = false;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < agg.series.size(); ++c) {
        if (c) out += delim;
        out += agg.series[c].data[r];
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace lims
