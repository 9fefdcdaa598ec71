#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <tuple>

#include "helpers.hpp"

using namespace uhop;
using testutil::graph_from;

namespace {

std::set<std::tuple<std::string, std::string, std::string>> labelled(const KnowledgeGraph& g) {
  std::set<std::tuple<std::string, std::string, std::string>> out;
  for (const Triple& t : g.triples())
    out.emplace(g.entity_label(t.head), g.relation_label(t.relation), g.entity_label(t.tail));
  return out;
}

KnowledgeGraph grid_graph(int side) {
  KnowledgeGraph::Builder b;
  for (const auto& t : grid_triples(side)) b.add(t[0], t[1], t[2]);
  return std::move(b).build();
}

}  // namespace

TEST(KgStore, SingleLine) {
  auto g = graph_from("(4,1)\tSouth\t(5,1)\n");
  EXPECT_EQ(g.num_entities(), 2u);
  EXPECT_EQ(g.num_relations(), 1u);
  auto out = g.outbound(g.entity("(4,1)"));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(g.relation_label(out[0].relation), "South");
  ASSERT_EQ(out[0].tails.size(), 1u);
  EXPECT_EQ(g.entity_label(out[0].tails[0]), "(5,1)");
  auto t = g.transit(g.entity("(4,1)"), g.relation("South"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(g.entity_label(t[0]), "(5,1)");
}

TEST(KgStore, EmptyFileGivesEmptyGraph) {
  auto g = graph_from("");
  EXPECT_EQ(g.num_entities(), 0u);
  EXPECT_EQ(g.num_triples(), 0u);
}

TEST(KgStore, DuplicatesCollapse) {
  auto once = graph_from("a\tr\tb\na\ts\tc\n");
  auto twice = graph_from("a\tr\tb\na\tr\tb\na\ts\tc\na\ts\tc\n");
  EXPECT_EQ(twice.num_triples(), 2u);
  EXPECT_EQ(labelled(once), labelled(twice));
}

TEST(KgStore, IdsInFirstAppearanceOrder) {
  auto g = graph_from("x\tq\ty\ny\tp\tz\n");
  EXPECT_EQ(g.entity("x").value, 0u);
  EXPECT_EQ(g.entity("y").value, 1u);
  EXPECT_EQ(g.entity("z").value, 2u);
  EXPECT_EQ(g.relation("q").value, 0u);
  EXPECT_EQ(g.relation("p").value, 1u);
}

TEST(KgStore, MultiTailTransitIsAscending) {
  auto g = graph_from("h\tr\tt2\nh\tr\tt1\nt1\tx\tt2\n");
  auto tails = g.transit(g.entity("h"), g.relation("r"));
  ASSERT_EQ(tails.size(), 2u);
  EXPECT_LT(tails[0], tails[1]);
  std::set<std::string> names{g.entity_label(tails[0]), g.entity_label(tails[1])};
  EXPECT_EQ(names, (std::set<std::string>{"t1", "t2"}));
}

TEST(KgStore, OutboundOrderedByRelationId) {
  auto g = graph_from("a\tz\tb\na\ty\tc\na\tz\tc\nb\ty\ta\n");
  auto out = g.outbound(g.entity("a"));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_LT(out[0].relation, out[1].relation);
  EXPECT_EQ(out[0].tails.size(), 2u);
}

TEST(KgStore, SinkHasEmptyOutbound) {
  auto g = graph_from("a\tr\tb\n");
  EXPECT_TRUE(g.outbound(g.entity("b")).empty());
}

TEST(KgStore, TransitOnMissingRelationThrows) {
  auto g = graph_from("a\tr\tb\nb\ts\ta\n");
  EXPECT_THROW(g.transit(g.entity("a"), g.relation("s")), TransitError);
}

TEST(KgStore, UnknownIdsThrow) {
  auto g = graph_from("a\tr\tb\n");
  EXPECT_THROW(g.outbound(EntityId{7}), LookupError);
  EXPECT_THROW(g.entity("nope"), LookupError);
  EXPECT_THROW(g.relation("nope"), LookupError);
}

TEST(KgStore, GridInteriorHasEightRelations) {
  auto g = grid_graph(16);
  EXPECT_EQ(g.outbound(g.entity(cell_label(5, 7))).size(), 8u);
}

TEST(KgStore, GridCornerHasThreeRelations) {
  for (int side : {2, 3, 8, 16}) {
    auto g = grid_graph(side);
    EXPECT_EQ(g.outbound(g.entity(cell_label(0, 0))).size(), 3u) << "side " << side;
  }
}

TEST(KgStore, GridTransitSouth) {
  auto g = grid_graph(16);
  auto t = g.transit(g.entity("(4,1)"), g.relation("South"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(g.entity_label(t[0]), "(5,1)");
}

TEST(KgStore, TailCountsSumToTripleCount) {
  for (auto g : {grid_graph(5), graph_from("h\tr\tt1\nh\tr\tt2\nt1\ts\th\nt2\ts\tt1\n")}) {
    std::size_t sum = 0;
    for (std::uint32_t e = 0; e < g.num_entities(); ++e)
      for (const auto& edge : g.outbound(EntityId{e})) sum += edge.tails.size();
    EXPECT_EQ(sum, g.num_triples());
  }
}

TEST(KgStore, RepeatedLoadsAreIdentical) {
  std::ostringstream tsv;
  for (const auto& t : grid_triples(4)) tsv << t[0] << '\t' << t[1] << '\t' << t[2] << '\n';
  auto a = graph_from(tsv.str());
  auto b = graph_from(tsv.str());
  for (std::uint32_t e = 0; e < a.num_entities(); ++e) {
    auto oa = a.outbound(EntityId{e});
    auto ob = b.outbound(EntityId{e});
    ASSERT_EQ(oa.size(), ob.size());
    for (std::size_t i = 0; i < oa.size(); ++i) {
      EXPECT_EQ(oa[i].relation, ob[i].relation);
      EXPECT_EQ(oa[i].tails, ob[i].tails);
    }
  }
}

TEST(KgStore, TsvRoundTrip) {
  auto g = graph_from("b\tr\tc\na\tr\tb\na\ts.t_u\tc\n");
  testutil::TempDir dir("kg_roundtrip");
  save_triples(g, (dir / "kb.tsv").string());
  auto back = load_triples((dir / "kb.tsv").string());
  EXPECT_EQ(labelled(g), labelled(back));
  std::ostringstream again;
  back.write_tsv(again);
  EXPECT_EQ(testutil::read_file(dir / "kb.tsv"), again.str());
}

TEST(KgStore, ParseErrorReportsLine) {
  try {
    graph_from("a\tr\tb\nbroken line\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(graph_from("a\tr\tb\tc\n"), ParseError);
  EXPECT_THROW(graph_from("a\t\tb\n"), ParseError);
}

TEST(KgStore, MissingFileThrows) { EXPECT_THROW(load_triples("/nonexistent/kb.tsv"), ParseError); }

TEST(KgStore, RelationTokenization) {
  EXPECT_EQ(tokenize_relation("people.person/place_of_birth"),
            (std::vector<std::string>{"people", "person", "place", "of", "birth"}));
  EXPECT_EQ(tokenize_relation("NorthEast"), (std::vector<std::string>{"northeast"}));
  EXPECT_THROW(graph_from("a\t._/\tb\n"), ParseError);
}
