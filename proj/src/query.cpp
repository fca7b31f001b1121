#include "lims/query.hpp"

#include <algorithm>

#include "lims/timestamp.hpp"

namespace lims {

namespace {

using json = nlohmann::json;

std::string text_of(const json& v, const std::string& key) {
  if (!v.is_string()) throw QueryError("'" + key + "' expects a string");
  return v.get<std::string>();
}

TimePoint time_of(const json& v, const char* key) {
  if (!v.is_string()) throw QueryError(std::string("date_range.") + key + " expects an ISO-8601 string");
  auto ts = Timestamp::parse(v.get<std::string>());
  if (!ts) throw QueryError(std::string("date_range.") + key + " is not ISO-8601");
  return ts->instant();
}

BooleanQuery parse_node(const json& j, std::size_t depth) {
  if (depth > 64) throw QueryError("query nested too deeply");
  if (j.is_null()) return BooleanQuery::all();
  if (!j.is_object()) throw QueryError("query node must be an object");
  if (j.empty()) return BooleanQuery::all();
  if (j.size() != 1) throw QueryError("query node must have exactly one key");
  const std::string key = j.begin().key();
  const json& value = j.begin().value();
  if (key == "and" || key == "or") {
    if (!value.is_array()) throw QueryError("'" + key + "' expects an array");
    std::vector<BooleanQuery> kids;
    for (const auto& c : value) kids.push_back(parse_node(c, depth + 1));
    return key == "and" ? BooleanQuery::conj(std::move(kids)) : BooleanQuery::disj(std::move(kids));
  }
  if (key == "not") return BooleanQuery::negate(parse_node(value, depth + 1));

  Predicate p;
  if (key == "tool_name") {
    p.field = Field::ToolName;
  } else if (key == "project") {
    p.field = Field::Project;
  } else if (key == "sample_code~") {
    p.field = Field::SampleCode;
  } else if (key == "descriptor_name") {
    p.field = Field::DescriptorName;
  } else if (key == "file_path~") {
    p.field = Field::FilePath;
  } else if (key == "date_range") {
    p.field = Field::DateRange;
    if (!value.is_object()) throw QueryError("'date_range' expects an object");
    for (const auto& [k, v] : value.items()) {
      if (k == "from") {
        p.from = time_of(v, "from");
      } else if (k == "to") {
        p.to = time_of(v, "to");
      } else {
        throw QueryError("unknown date_range key '" + k + "'");
      }
    }
    return BooleanQuery::leaf(std::move(p));
  } else {
    throw QueryError("unknown query key '" + key + "'");
  }
  p.text = text_of(value, key);
  return BooleanQuery::leaf(std::move(p));
}

const char* field_key(Field f) {
  switch (f) {
    case Field::ToolName: return "tool_name";
    case Field::Project: return "project";
    case Field::SampleCode: return "sample_code~";
    case Field::DateRange: return "date_range";
    case Field::DescriptorName: return "descriptor_name";
    case Field::FilePath: return "file_path~";
  }
  return "?";
}

}  // namespace

std::size_t BooleanQuery::depth() const {
  std::size_t d = 0;
  for (const auto& c : children) d = std::max(d, c.depth());
  return d + 1;
}

BooleanQuery parse_query(const nlohmann::json& j) { return parse_node(j, 0); }

nlohmann::json to_json(const BooleanQuery& q) {
  switch (q.op) {
    case BooleanQuery::Op::And:
    case BooleanQuery::Op::Or: {
      json arr = json::array();
      for (const auto& c : q.children) arr.push_back(to_json(c));
      return json{{q.op == BooleanQuery::Op::And ? "and" : "or", arr}};
    }
    case BooleanQuery::Op::Not: return json{{"not", to_json(q.children.at(0))}};
    case BooleanQuery::Op::Atom: break;
  }
  if (q.atom.field == Field::DateRange) {
    json range = json::object();
    if (q.atom.from) range["from"] = Timestamp::from_precise(*q.atom.from).str();
    if (q.atom.to) range["to"] = Timestamp::from_precise(*q.atom.to).str();
    return json{{"date_range", range}};
  }
  return json{{field_key(q.atom.field), q.atom.text}};
}

std::string to_sql(const BooleanQuery& q, std::vector<std::string>& params) {
  switch (q.op) {
    case BooleanQuery::Op::And:
    case BooleanQuery::Op::Or: {
      if (q.children.empty()) return q.op == BooleanQuery::Op::And ? "1" : "0";
      std::string out = "(";
      for (std::size_t i = 0; i < q.children.size(); ++i) {
        if (i) out += q.op == BooleanQuery::Op::And ? " AND " : " OR ";
        out += to_sql(q.children[i], params);
      }
      return out + ")";
    }
    case BooleanQuery::Op::Not: return "(NOT " + to_sql(q.children.at(0), params) + ")";
    case BooleanQuery::Op::Atom: break;
  }
  const auto& p = q.atom;
  switch (p.field) {
    case Field::ToolName: params.push_back(p.text); return "(t.name = ?)";
    case Field::Project: params.push_back(p.text); return "COALESCE(p.name = ?, 0)";
    case Field::SampleCode: params.push_back(p.text); return "COALESCE(instr(s.sample_code, ?) > 0, 0)";
    case Field::FilePath: params.push_back(p.text); return "(instr(f.archive_path, ?) > 0)";
    case Field::DescriptorName:
      params.push_back(p.text);
      return "EXISTS(SELECT 1 FROM data_arrays d WHERE d.file_id = f.id AND d.descriptor_name = ?)";
    case Field::DateRange: {
      std::string out = "(1";
      if (p.from) {
        params.push_back(std::to_string(to_micros(*p.from)));
        out += " AND f.file_timestamp >= CAST(? AS INTEGER)";
      }
      if (p.to) {
        params.push_back(std::to_string(to_micros(*p.to)));
        out += " AND f.file_timestamp <= CAST(? AS INTEGER)";
      }
      return out + ")";
    }
  }
  return "0";
}

}  // namespace lims
