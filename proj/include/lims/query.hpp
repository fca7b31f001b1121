#pragma once

// Boolean search over stored files: AND/OR/NOT trees of atomic predicates.
//
// JSON form, one key per node:
//   {"and": [q, ...]}   {"or": [q, ...]}   {"not": q}
//   {"tool_name": "N and K"}     exact tool name
//   {"project": "CIGS"}          exact project name
//   {"sample_code~": "a239"}     substring of the sample code
//   {"descriptor_name": "Wavelength"}
//   {"file_path~": "nandk/"}     substring of the archive path
//   {"date_range": {"from": ISO-8601, "to": ISO-8601}}  inclusive, either bound optional
// An empty object (or {"and": []}) matches everything.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lims/util.hpp"

namespace lims {

class QueryError : public Error {
 public:
  using Error::Error;
};

enum class Field { ToolName, Project, SampleCode, DateRange, DescriptorName, FilePath };

struct Predicate {
  Field field = Field::ToolName;
  std::string text;
  std::optional<TimePoint> from;
  std::optional<TimePoint> to;
};

struct BooleanQuery {
  enum class Op { And, Or, Not, Atom };

  Op op = Op::And;
  std::vector<BooleanQuery> children;
  Predicate atom;

  static BooleanQuery all() { return {}; }
  static BooleanQuery leaf(Predicate p) { return {Op::Atom, {}, std::move(p)}; }
  static BooleanQuery conj(std::vector<BooleanQuery> c) { return {Op::And, std::move(c), {}}; }
  static BooleanQuery disj(std::vector<BooleanQuery> c) { return {Op::Or, std::move(c), {}}; }
  static BooleanQuery negate(BooleanQuery q) { return {Op::Not, {std::move(q)}, {}}; }

  std::size_t depth() const;
};

/// Throws QueryError on anything that is not a well-formed tree.
BooleanQuery parse_query(const nlohmann::json& j);
nlohmann::json to_json(const BooleanQuery& q);

/// SQL boolean expression over the aliases used by Store::evaluate
/// (f = file_information, t = tools, s = samples, p = projects), with
/// positional parameters appended to `params`.
std::string to_sql(const BooleanQuery& q, std::vector<std::string>& params);

}  // namespace lims
