#pragma once

// The two XML documents exchanged by the pipeline: the NCPVops control
// message and the NCPVData common data format. Element and attribute names
// are case-sensitive and fixed; schemas/ holds the matching XSDs.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lims/timestamp.hpp"
#include "lims/xml.hpp"

namespace lims {

class FormatError : public Error {
 public:
  enum class Kind { MalformedXml, SchemaViolation, InvariantViolation };

  FormatError(Kind kind, std::vector<std::string> violations);
  Kind kind() const { return kind_; }
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  Kind kind_;
  std::vector<std::string> violations_;
};

enum class ToolKind { Characterization, Processing };

std::string_view to_string(ToolKind k);
std::optional<ToolKind> parse_tool_kind(std::string_view s);

/// Attributes and child elements a decoder did not recognise; re-emitted
/// after the known content on encode.
struct Extras {
  std::vector<xml::Attribute> attributes;
  std::vector<xml::Element> elements;

  bool empty() const { return attributes.empty() && elements.empty(); }
  friend bool operator==(const Extras&, const Extras&) = default;
};

struct ToolInfo {
  std::string name;
  ToolKind kind = ToolKind::Characterization;
  std::optional<std::int64_t> id;

  friend bool operator==(const ToolInfo&, const ToolInfo&) = default;
};

// ---- NCPVops ---------------------------------------------------------------

enum class OpsRole { transfer, update, readback, test, ack, error };

std::string_view to_string(OpsRole r);
std::optional<OpsRole> parse_ops_role(std::string_view s);
inline bool is_command(OpsRole r) {
  return r == OpsRole::transfer || r == OpsRole::update || r == OpsRole::readback || r == OpsRole::test;
}

struct OpsTarget {
  std::string source_path;
  std::string source_host;
  ToolInfo tool;
  std::optional<std::string> sample_id;
  std::optional<std::string> operator_username;
  Extras extras;

  friend bool operator==(const OpsTarget&, const OpsTarget&) = default;
};

struct OpsStatus {
  std::string code;
  std::string detail;

  friend bool operator==(const OpsStatus&, const OpsStatus&) = default;
};

struct OpsMessage {
  OpsRole role = OpsRole::test;
  Timestamp timestamp;
  std::optional<OpsTarget> target;
  std::optional<OpsStatus> status;
  Extras extras;

  static OpsMessage ack(std::string code = "OK", std::string detail = {});
  static OpsMessage error(std::string code, std::string detail);

  friend bool operator==(const OpsMessage&, const OpsMessage&) = default;
};

std::vector<std::string> validate(const OpsMessage& msg);
OpsMessage decode_ops_message(std::string_view bytes);
std::string encode_ops_message(const OpsMessage& msg);

// ---- NCPVData --------------------------------------------------------------

enum class DocRole { archive, readback };

std::string_view to_string(DocRole r);

struct MetaDatum {
  std::string name;
  std::optional<std::string> value;
  std::string units;
  std::optional<std::string> comments;
  std::vector<xml::Attribute> extra_attributes;

  friend bool operator==(const MetaDatum&, const MetaDatum&) = default;
};

struct Descriptor {
  std::string name;
  std::string units;

  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

struct DataSeries {
  Descriptor descriptor;
  std::vector<std::string> data;  // lexemes exactly as written
  Extras extras;

  /// Parsed view: engaged only where the lexeme is a decimal number.
  std::vector<std::optional<double>> numeric() const;

  friend bool operator==(const DataSeries&, const DataSeries&) = default;
};

struct Aggregate {
  std::vector<MetaDatum> metadata;
  std::vector<DataSeries> series;
  Extras extras;

  const MetaDatum* find_metadata(std::string_view name) const;
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct NamedRef {
  std::optional<std::int64_t> id;
  std::string name;

  friend bool operator==(const NamedRef&, const NamedRef&) = default;
};

struct FileLink {
  Timestamp timestamp;
  std::string file;

  friend bool operator==(const FileLink&, const FileLink&) = default;
};

struct DataDocument {
  DocRole role = DocRole::archive;
  Timestamp timestamp;
  std::string doc_id;
  ToolKind kind = ToolKind::Characterization;
  NamedRef measurement_type;  // <Type> for Characterization, <Recipe> for Processing
  NamedRef tool;
  std::optional<std::int64_t> operator_id;
  FileLink data_file_link;
  std::string comments;
  std::vector<Aggregate> aggregates;
  Extras extras;        // on the NCPVData root
  Extras block_extras;  // on the Characterization/Processing block

  friend bool operator==(const DataDocument&, const DataDocument&) = default;
};

/// True when `path` is relative, nonempty and free of ".." components.
bool is_archive_relative(std::string_view path);

std::vector<std::string> validate(const DataDocument& doc);
DataDocument decode_data_document(std::string_view bytes);
std::string encode_data_document(const DataDocument& doc);

}  // namespace lims
