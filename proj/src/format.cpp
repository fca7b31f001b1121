#include "lims/format.hpp"

#include <algorithm>
#include <charconv>
#include <initializer_list>

namespace lims {

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) {
    if (!out.empty()) out += "; ";
    out += s;
  }
  return out;
}

bool contains(std::initializer_list<std::string_view> set, std::string_view s) {
  return std::find(set.begin(), set.end(), s) != set.end();
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Collects violations while walking a parsed document.
class Checker {
 public:
  std::vector<std::string> violations;

  void add(std::string v) { violations.push_back(std::move(v)); }

  const std::string* required(const xml::Element& el, std::string_view attr) {
    const auto* v = el.attribute(attr);
    if (!v) add(std::string(attr) + " required on <" + el.name + ">");
    return v;
  }

  std::optional<std::int64_t> optional_int(const xml::Element& el, std::string_view attr) {
    const auto* v = el.attribute(attr);
    if (!v) return std::nullopt;
    auto n = parse_int(*v);
    if (!n) add(std::string(attr) + " on <" + el.name + "> is not an integer: '" + *v + "'");
    return n;
  }

  Timestamp timestamp(const xml::Element& el, std::string_view attr) {
    const auto* v = required(el, attr);
    if (!v) return {};
    auto ts = Timestamp::parse(*v);
    if (!ts) {
      add(std::string(attr) + " on <" + el.name + "> is not ISO-8601: '" + *v + "'");
      return {};
    }
    return *ts;
  }

  void only_attributes(const xml::Element& el, std::initializer_list<std::string_view> known) {
    for (const auto& [k, v] : el.attributes)
      if (!contains(known, k)) add("unexpected attribute " + k + " on <" + el.name + ">");
  }

  void no_elements(const xml::Element& el) {
    if (el.has_element_children()) add("<" + el.name + "> must not contain elements");
  }

  void leaf(const xml::Element& el, std::initializer_list<std::string_view> known) {
    only_attributes(el, known);
    no_elements(el);
    if (!el.text().empty() && !std::all_of(el.text().begin(), el.text().end(), [](char c) {
          return c == ' ' || c == '\n' || c == '\t' || c == '\r';
        }))
      add("<" + el.name + "> must not contain text");
  }

  void text_only(const xml::Element& el) {
    only_attributes(el, {});
    no_elements(el);
  }

  // Single optional occurrence of a child; reports duplicates.
  const xml::Element* at_most_one(const xml::Element& parent, std::string_view name) {
    const xml::Element* found = nullptr;
    for (const auto* c : parent.elements()) {
      if (c->name != name) continue;
      if (found) add("duplicate <" + std::string(name) + "> in <" + parent.name + ">");
      found = found ? found : c;
    }
    return found;
  }

  const xml::Element* exactly_one(const xml::Element& parent, std::string_view name) {
    const auto* el = at_most_one(parent, name);
    if (!el) add("<" + std::string(name) + "> required in <" + parent.name + ">");
    return el;
  }
};

Extras collect_extras(const xml::Element& el, std::initializer_list<std::string_view> attrs,
                      std::initializer_list<std::string_view> elements) {
  Extras ex;
  for (const auto& a : el.attributes)
    if (!contains(attrs, a.first)) ex.attributes.push_back(a);
  for (const auto* c : el.elements())
    if (!contains(elements, c->name)) ex.elements.push_back(*c);
  return ex;
}

xml::Element parse_or_throw(std::string_view bytes) {
  try {
    return xml::parse(bytes);
  } catch (const xml::ParseError& e) {
    throw FormatError(FormatError::Kind::MalformedXml, {e.what()});
  }
}

std::string id_string(std::int64_t id) { return std::to_string(id); }

}  // namespace

FormatError::FormatError(Kind kind, std::vector<std::string> violations)
    : Error(std::string(kind == Kind::MalformedXml       ? "malformed XML: "
                        : kind == Kind::SchemaViolation ? "schema violation: "
                                                        : "invariant violation: ") +
            join(violations)),
      kind_(kind),
      violations_(std::move(violations)) {}

std::string_view to_string(ToolKind k) {
  return k == ToolKind::Characterization ? "Characterization" : "Processing";
}

std::optional<ToolKind> parse_tool_kind(std::string_view s) {
  if (s == "Characterization") return ToolKind::Characterization;
  if (s == "Processing") return ToolKind::Processing;
  return std::nullopt;
}

std::string_view to_string(OpsRole r) {
  switch (r) {
    case OpsRole::transfer: return "transfer";
    case OpsRole::update: return "update";
    case OpsRole::readback: return "readback";
    case OpsRole::test: return "test";
    case OpsRole::ack: return "ack";
    case OpsRole::error: return "error";
  }
  return "?";
}

std::optional<OpsRole> parse_ops_role(std::string_view s) {
  for (auto r : {OpsRole::transfer, OpsRole::update, OpsRole::readback, OpsRole::test, OpsRole::ack, OpsRole::error})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

std::string_view to_string(DocRole r) { return r == DocRole::archive ? "archive" : "readback"; }

OpsMessage OpsMessage::ack(std::string code, std::string detail) {
  OpsMessage m;
  m.role = OpsRole::ack;
  m.timestamp = Timestamp::now();
  m.status = OpsStatus{std::move(code), std::move(detail)};
  return m;
}

OpsMessage OpsMessage::error(std::string code, std::string detail) {
  OpsMessage m;
  m.role = OpsRole::error;
  m.timestamp = Timestamp::now();
  m.status = OpsStatus{std::move(code), std::move(detail)};
  return m;
}

// ---- NCPVops ---------------------------------------------------------------

std::vector<std::string> validate(const OpsMessage& msg) {
  std::vector<std::string> v;
  bool reply = msg.role == OpsRole::ack || msg.role == OpsRole::error;
  if (is_command(msg.role) && !msg.target) v.push_back("Target required for role " + std::string(to_string(msg.role)));
  if (reply && !msg.status) v.push_back("Status required for role " + std::string(to_string(msg.role)));
  if (!reply && msg.status) v.push_back("Status only allowed on ack/error");
  if (msg.status && msg.status->code.empty()) v.push_back("Status code must be nonempty");
  if (msg.target) {
    if (msg.target->tool.name.empty()) v.push_back("ToolInfo name must be nonempty");
    bool needs_path = msg.role == OpsRole::transfer || msg.role == OpsRole::update || msg.role == OpsRole::readback;
    if (needs_path && msg.target->source_path.empty()) v.push_back("Source path must be nonempty");
  }
  return v;
}

OpsMessage decode_ops_message(std::string_view bytes) {
  auto root = parse_or_throw(bytes);
  Checker ck;
  OpsMessage msg;
  if (root.name != "NCPVops") ck.add("root element must be <NCPVops>, found <" + root.name + ">");

  if (const auto* role = root.attribute("role")) {
    if (auto r = parse_ops_role(*role)) {
      msg.role = *r;
    } else {
      ck.add("role '" + *role + "' is not one of transfer|update|readback|test|ack|error");
    }
  } else {
    ck.add("role required");
  }
  msg.timestamp = ck.timestamp(root, "timestamp");
  msg.extras = collect_extras(root, {"role", "timestamp"}, {"Target", "Status"});

  if (const auto* t = ck.at_most_one(root, "Target")) {
    OpsTarget target;
    target.extras = collect_extras(*t, {}, {"Source", "ToolInfo", "SampleID", "Operator"});
    if (const auto* src = ck.exactly_one(*t, "Source")) {
      ck.leaf(*src, {"path", "host"});
      if (const auto* p = ck.required(*src, "path")) target.source_path = *p;
      if (const auto* h = ck.required(*src, "host")) target.source_host = *h;
    }
    if (const auto* ti = ck.exactly_one(*t, "ToolInfo")) {
      ck.leaf(*ti, {"name", "type", "id"});
      if (const auto* n = ck.required(*ti, "name")) {
        if (n->empty()) ck.add("ToolInfo name must be nonempty");
        target.tool.name = *n;
      }
      if (const auto* k = ck.required(*ti, "type")) {
        if (auto kind = parse_tool_kind(*k)) {
          target.tool.kind = *kind;
        } else {
          ck.add("ToolInfo type '" + *k + "' is not Characterization|Processing");
        }
      }
      target.tool.id = ck.optional_int(*ti, "id");
    }
    if (const auto* s = ck.at_most_one(*t, "SampleID")) {
      ck.text_only(*s);
      target.sample_id = s->text();
    }
    if (const auto* op = ck.at_most_one(*t, "Operator")) {
      ck.only_attributes(*op, {});
      for (const auto* c : op->elements())
        if (c->name != "Username") ck.add("unexpected <" + c->name + "> in <Operator>");
      if (const auto* u = ck.exactly_one(*op, "Username")) {
        ck.text_only(*u);
        target.operator_username = u->text();
      }
    }
    msg.target = std::move(target);
  }

  if (const auto* st = ck.at_most_one(root, "Status")) {
    ck.only_attributes(*st, {"code"});
    ck.no_elements(*st);
    OpsStatus status;
    if (const auto* c = ck.required(*st, "code")) status.code = *c;
    status.detail = st->text();
    msg.status = std::move(status);
  }

  if (ck.violations.empty()) {
    for (auto& v : validate(msg)) ck.add(std::move(v));
  }
  if (!ck.violations.empty()) throw FormatError(FormatError::Kind::SchemaViolation, std::move(ck.violations));
  return msg;
}

std::string encode_ops_message(const OpsMessage& msg) {
  if (auto v = validate(msg); !v.empty()) throw FormatError(FormatError::Kind::InvariantViolation, std::move(v));
  xml::Element root{"NCPVops", {}, {}};
  root.set_attribute("role", std::string(to_string(msg.role)));
  root.set_attribute("timestamp", msg.timestamp.str());
  for (const auto& a : msg.extras.attributes) root.attributes.push_back(a);
  if (msg.target) {
    const auto& t = *msg.target;
    auto& target = root.add_child("Target");
    for (const auto& a : t.extras.attributes) target.attributes.push_back(a);
    auto& src = target.add_child("Source");
    src.set_attribute("path", t.source_path);
    src.set_attribute("host", t.source_host);
    auto& ti = target.add_child("ToolInfo");
    ti.set_attribute("name", t.tool.name);
    ti.set_attribute("type", std::string(to_string(t.tool.kind)));
    if (t.tool.id) ti.set_attribute("id", id_string(*t.tool.id));
    if (t.sample_id) target.add_child("SampleID").add_text(*t.sample_id);
    if (t.operator_username) target.add_child("Operator").add_child("Username").add_text(*t.operator_username);
    for (const auto& e : t.extras.elements) target.children.push_back(xml::Node{e});
  }
  if (msg.status) {
    auto& st = root.add_child("Status");
    st.set_attribute("code", msg.status->code);
    st.add_text(msg.status->detail);
  }
  for (const auto& e : msg.extras.elements) root.children.push_back(xml::Node{e});
  return xml::write(root);
}

// ---- NCPVData --------------------------------------------------------------

std::vector<std::optional<double>> DataSeries::numeric() const {
  std::vector<std::optional<double>> out;
  out.reserve(data.size());
  for (const auto& lex : data) out.push_back(parse_decimal(lex));
  return out;
}

const MetaDatum* Aggregate::find_metadata(std::string_view name) const {
  for (const auto& m : metadata)
    if (m.name == name) return &m;
  return nullptr;
}

bool is_archive_relative(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.front() == '\\') return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    auto end = path.find_first_of("/\\", start);
    if (end == std::string_view::npos) end = path.size();
    if (path.substr(start, end - start) == "..") return false;
    start = end + 1;
  }
  return true;
}

std::vector<std::string> validate(const DataDocument& doc) {
  std::vector<std::string> v;
  if (doc.tool.name.empty()) v.push_back("Tool name must be nonempty");
  if (!is_archive_relative(doc.data_file_link.file))
    v.push_back("DataFileLink file must be a relative archive path: '" + doc.data_file_link.file + "'");
  for (const auto& agg : doc.aggregates) {
    for (const auto& m : agg.metadata)
      if (m.name.empty()) v.push_back("MetaData name must be nonempty");
  }
  return v;
}

DataDocument decode_data_document(std::string_view bytes) {
  auto root = parse_or_throw(bytes);
  Checker ck;
  DataDocument doc;
  if (root.name != "NCPVData") ck.add("root element must be <NCPVData>, found <" + root.name + ">");

  if (const auto* role = ck.required(root, "role")) {
    if (*role == "archive") {
      doc.role = DocRole::archive;
    } else if (*role == "readback") {
      doc.role = DocRole::readback;
    } else {
      ck.add("role '" + *role + "' is not archive|readback");
    }
  }
  doc.timestamp = ck.timestamp(root, "timestamp");
  if (const auto* id = root.attribute("id")) doc.doc_id = *id;
  doc.extras = collect_extras(root, {"role", "timestamp", "id"}, {"Characterization", "Processing"});

  const auto* chr = ck.at_most_one(root, "Characterization");
  const auto* proc = ck.at_most_one(root, "Processing");
  if (chr && proc) ck.add("<NCPVData> holds both <Characterization> and <Processing>");
  if (!chr && !proc) ck.add("<Characterization> or <Processing> required in <NCPVData>");
  const xml::Element* block = chr ? chr : proc;
  if (block) {
    doc.kind = chr ? ToolKind::Characterization : ToolKind::Processing;
    const char* type_name = chr ? "Type" : "Recipe";
    doc.block_extras =
        collect_extras(*block, {}, {type_name, "Tool", "Operator", "DataFileLink", "Comments", "Aggregate"});

    if (const auto* t = ck.exactly_one(*block, type_name)) {
      ck.leaf(*t, {"id", "name"});
      doc.measurement_type.id = ck.optional_int(*t, "id");
      if (const auto* n = ck.required(*t, "name")) doc.measurement_type.name = *n;
    }
    if (const auto* t = ck.exactly_one(*block, "Tool")) {
      ck.leaf(*t, {"id", "name"});
      doc.tool.id = ck.optional_int(*t, "id");
      if (const auto* n = ck.required(*t, "name")) doc.tool.name = *n;
    }
    if (const auto* op = ck.at_most_one(*block, "Operator")) {
      ck.leaf(*op, {"id"});
      if (ck.required(*op, "id")) doc.operator_id = ck.optional_int(*op, "id");
    }
    if (const auto* link = ck.exactly_one(*block, "DataFileLink")) {
      ck.leaf(*link, {"timestamp", "file"});
      doc.data_file_link.timestamp = ck.timestamp(*link, "timestamp");
      if (const auto* f = ck.required(*link, "file")) doc.data_file_link.file = *f;
    }
    if (const auto* c = ck.at_most_one(*block, "Comments")) {
      ck.text_only(*c);
      doc.comments = c->text();
    }
    for (const auto* a : block->elements()) {
      if (a->name != "Aggregate") continue;
      Aggregate agg;
      agg.extras = collect_extras(*a, {}, {"MetaData", "Data"});
      for (const auto* c : a->elements()) {
        if (c->name == "MetaData") {
          ck.no_elements(*c);
          MetaDatum m;
          if (const auto* n = ck.required(*c, "name")) m.name = *n;
          if (const auto* val = c->attribute("value")) m.value = *val;
          if (const auto* u = c->attribute("units")) m.units = *u;
          if (const auto* cm = c->attribute("comments")) m.comments = *cm;
          for (const auto& at : c->attributes)
            if (!contains({"name", "value", "units", "comments"}, at.first)) m.extra_attributes.push_back(at);
          agg.metadata.push_back(std::move(m));
        } else if (c->name == "Data") {
          DataSeries s;
          s.extras = collect_extras(*c, {}, {"descriptor"});
          if (const auto* d = ck.exactly_one(*c, "descriptor")) {
            ck.only_attributes(*d, {"name", "units"});
            if (const auto* n = ck.required(*d, "name")) s.descriptor.name = *n;
            if (const auto* u = d->attribute("units")) s.descriptor.units = *u;
            for (const auto* datum : d->elements()) {
              if (datum->name != "datum") {
                ck.add("unexpected <" + datum->name + "> in <descriptor>");
                continue;
              }
              ck.leaf(*datum, {"value"});
              if (const auto* val = ck.required(*datum, "value")) s.data.push_back(*val);
            }
          }
          agg.series.push_back(std::move(s));
        }
      }
      doc.aggregates.push_back(std::move(agg));
    }
  }

  if (ck.violations.empty()) {
    for (auto& v : validate(doc)) ck.add(std::move(v));
  }
  if (!ck.violations.empty()) throw FormatError(FormatError::Kind::SchemaViolation, std::move(ck.violations));
  return doc;
}

std::string encode_data_document(const DataDocument& doc) {
  if (auto v = validate(doc); !v.empty()) throw FormatError(FormatError::Kind::InvariantViolation, std::move(v));
  xml::Element root{"NCPVData", {}, {}};
  root.set_attribute("role", std::string(to_string(doc.role)));
  root.set_attribute("timestamp", doc.timestamp.str());
  root.set_attribute("id", doc.doc_id);
  for (const auto& a : doc.extras.attributes) root.attributes.push_back(a);

  auto& block = root.add_child(std::string(to_string(doc.kind)));
  for (const auto& a : doc.block_extras.attributes) block.attributes.push_back(a);
  auto& type = block.add_child(doc.kind == ToolKind::Characterization ? "Type" : "Recipe");
  if (doc.measurement_type.id) type.set_attribute("id", id_string(*doc.measurement_type.id));
  type.set_attribute("name", doc.measurement_type.name);
  auto& tool = block.add_child("Tool");
  if (doc.tool.id) tool.set_attribute("id", id_string(*doc.tool.id));
  tool.set_attribute("name", doc.tool.name);
  if (doc.operator_id) block.add_child("Operator").set_attribute("id", id_string(*doc.operator_id));
  auto& link = block.add_child("DataFileLink");
  link.set_attribute("timestamp", doc.data_file_link.timestamp.str());
  link.set_attribute("file", doc.data_file_link.file);
  block.add_child("Comments").add_text(doc.comments);

  for (const auto& agg : doc.aggregates) {
    auto& a = block.add_child("Aggregate");
    for (const auto& at : agg.extras.attributes) a.attributes.push_back(at);
    for (const auto& m : agg.metadata) {
      auto& md = a.add_child("MetaData");
      // Attribute order mirrors the published example documents.
      if (m.comments) md.set_attribute("comments", *m.comments);
      md.set_attribute("units", m.units);
      if (m.value) md.set_attribute("value", *m.value);
      md.set_attribute("name", m.name);
      for (const auto& at : m.extra_attributes) md.attributes.push_back(at);
    }
    for (const auto& s : agg.series) {
      auto& data = a.add_child("Data");
      for (const auto& at : s.extras.attributes) data.attributes.push_back(at);
      auto& d = data.add_child("descriptor");
      d.set_attribute("units", s.descriptor.units);
      d.set_attribute("name", s.descriptor.name);
      for (const auto& lex : s.data) d.add_child("datum").set_attribute("value", lex);
      for (const auto& e : s.extras.elements) data.children.push_back(xml::Node{e});
    }
    for (const auto& e : agg.extras.elements) a.children.push_back(xml::Node{e});
  }
  for (const auto& e : doc.block_extras.elements) block.children.push_back(xml::Node{e});
  for (const auto& e : doc.extras.elements) root.children.push_back(xml::Node{e});
  return xml::write(root);
}

}  // namespace lims
