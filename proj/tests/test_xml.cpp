#include "doctest.h"
#include "lims/xml.hpp"

using namespace lims;

TEST_CASE("parses attributes, entities and nested elements") {
  auto root = xml::parse(R"(<?xml version="1.0"?><a x="1 &amp; 2" y='q'><b>t&lt;x&#65;&#x42;</b><c/></a>)");
  CHECK(root.name == "a");
  REQUIRE(root.attribute("x"));
  CHECK(*root.attribute("x") == "1 & 2");
  CHECK(*root.attribute("y") == "q");
  auto kids = root.elements();
  REQUIRE(kids.size() == 2);
  CHECK(kids[0]->text() == "t<xAB");
  CHECK(kids[1]->children.empty());
}

TEST_CASE("whitespace around attribute equals is accepted") {
  auto root = xml::parse("<a k\n=\"v\" j = 'w'/>");
  CHECK(*root.attribute("k") == "v");
  CHECK(*root.attribute("j") == "w");
}

TEST_CASE("rejects malformed documents") {
  for (const char* bad : {"", "<a>", "<a></b>", "<a x=1/>", "<a x='1' x='2'/>", "<a/><b/>", "<a>&bogus;</a>",
                          "<!DOCTYPE a><a/>", "<a x='<'/>", "text", "<a><!-- -- --></a>", "<a>]]></a>"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(xml::parse(bad), xml::ParseError);
  }
}

TEST_CASE("rejects invalid UTF-8") {
  CHECK_THROWS_AS(xml::parse("<a>\xC3</a>"), xml::ParseError);
  CHECK_THROWS_AS(xml::parse("<a>\xED\xA0\x80</a>"), xml::ParseError);
  CHECK_NOTHROW(xml::parse("<a>\xC3\xA9\xE2\x82\xAC\xF0\x9F\x98\x80</a>"));
}

TEST_CASE("parse error reports line") {
  try {
    xml::parse("<a>\n<b>\n</a>");
    FAIL("expected throw");
  } catch (const xml::ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("write then parse is identity, including mixed content and CDATA text") {
  auto root = xml::parse(
      "<r a=\"tab\there\"><m> lead <i>x</i> trail </m><e/><t>  </t><cd><![CDATA[<raw> & ]]></cd>"
      "<n>\n  <k v=\"&quot;q&quot;\"/>\n</n></r>");
  auto again = xml::parse(xml::write(root));
  CHECK(again == root);
  CHECK(*root.attribute("a") == "tab here");
  CHECK(root.elements()[3]->text() == "<raw> & ");
}

TEST_CASE("carriage returns in text survive a round trip") {
  xml::Element e{"a", {{"k", "l1\r\nl2"}}, {}};
  e.add_text("x\r\ny");
  auto back = xml::parse(xml::write(e));
  CHECK(back == e);
}
