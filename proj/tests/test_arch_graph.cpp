#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "layerscope/arch_graph.hpp"
#include "layerscope/error.hpp"
#include "test_support.hpp"

using namespace layerscope;
using test_support::code_of;

namespace {

int count_kind(const ArchGraph& g, LayerKind kind) {
  return static_cast<int>(std::count_if(g.nodes().begin(), g.nodes().end(),
                                        [&](const LayerNode& n) { return n.kind == kind; }));
}

std::map<int, int> positions(const ArchGraph& g) {
  std::map<int, int> pos;
  const auto& order = g.topo_order();
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
  return pos;
}

}  // namespace

TEST(ParseArch, MinimalDocument) {
  const ArchGraph g = parse_arch("input 3\nconv c1 k=3 s=1 d=1 p=1 ch=16 from=input");
  ASSERT_EQ(g.size(), 2u);
  const LayerNode& c1 = g.node("c1");
  EXPECT_EQ(c1.kind, LayerKind::Conv);
  EXPECT_EQ(c1.kernel, 3);
  EXPECT_EQ(c1.in_channels, 3);
  EXPECT_EQ(c1.out_channels, 16);
  EXPECT_EQ(c1.id, 1);
  EXPECT_EQ(topo_order(g), (std::vector<int>{0, 1}));
}

TEST(ParseArch, CommentsAndBlankLines) {
  const ArchGraph g = parse_arch("# net\n\ninput 1  # gray\nconv a k=5 s=2 d=1 p=0 ch=4 from=input\n");
  EXPECT_EQ(g.node("a").stride, 2);
}

TEST(ParseArch, DanglingReference) {
  try {
    parse_arch("input 3\nconv c1 k=3 s=1 d=1 p=1 ch=16 from=missing");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.code(), ErrorCode::DanglingReference);
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ParseArch, UnknownKindReportsPosition) {
  try {
    parse_arch("input 3\nconv c1 k=3 s=1 d=1 p=1 ch=16 from=input\n  foo x from=c1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownKind);
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ParseArch, SyntaxErrors) {
  EXPECT_EQ(code_of([] { parse_arch("input 3\nconv c1 k=x s=1 d=1 p=1 ch=16 from=input"); }), ErrorCode::Syntax);
  EXPECT_EQ(code_of([] { parse_arch("input 3\nconv c1 k=3 s=1 d=1 p=1 from=input"); }), ErrorCode::Syntax);
  EXPECT_EQ(code_of([] { parse_arch(""); }), ErrorCode::Syntax);
}

TEST(ParseArch, MultipleInputs) {
  EXPECT_EQ(code_of([] { parse_arch("input 3\ninput 1\n"); }), ErrorCode::Validation);
}

TEST(ParseArch, CycleRejected) {
  const char* text =
      "input 1\n"
      "conv a k=3 s=1 d=1 p=1 ch=4 from=b\n"
      "conv b k=3 s=1 d=1 p=1 ch=4 from=a\n";
  EXPECT_EQ(code_of([&] { parse_arch(text); }), ErrorCode::Cycle);
}

TEST(ParseArch, AddChannelMismatchRejected) {
  const char* text =
      "input 1\n"
      "conv a k=3 s=1 d=1 p=1 ch=4 from=input\n"
      "conv b k=3 s=1 d=1 p=1 ch=8 from=input\n"
      "add m from=a,b\n";
  EXPECT_EQ(code_of([&] { parse_arch(text); }), ErrorCode::Validation);
}

TEST(ParseArch, InvalidHyperparameters) {
  EXPECT_THROW(parse_arch("input 1\nconv a k=0 s=1 d=1 p=0 ch=4 from=input"), Error);
  EXPECT_THROW(parse_arch("input 1\nconv a k=3 s=0 d=1 p=0 ch=4 from=input"), Error);
  EXPECT_THROW(parse_arch("input 1\nconv a k=3 s=1 d=0 p=0 ch=4 from=input"), Error);
}

TEST(BuildGraph, OrphanRejected) {
  std::vector<LayerNode> nodes(3);
  nodes[0] = {.id = 0, .name = "input", .kind = LayerKind::Input, .out_channels = 1};
  nodes[1] = {.id = 1, .name = "a", .kind = LayerKind::ReLU, .inputs = {0}};
  // b only feeds itself and is unreachable from the input
  nodes[2] = {.id = 2, .name = "b", .kind = LayerKind::ReLU, .inputs = {2}};
  EXPECT_EQ(code_of([&] { ArchGraph::build("x", nodes); }), ErrorCode::Cycle);

  nodes[2] = {.id = 2, .name = "b", .kind = LayerKind::ReLU, .inputs = {}};
  EXPECT_EQ(code_of([&] { ArchGraph::build("x", nodes); }), ErrorCode::Validation);
}

TEST(BuildGraph, MutationIntroducingCycleRejected) {
  const ArchGraph g = generate_builtin("vgg11");
  std::vector<LayerNode> nodes = g.nodes();
  const int first_conv = g.conv_ids().front();
  const int last_conv = g.conv_ids().back();
  nodes[static_cast<std::size_t>(first_conv)].inputs = {last_conv};
  EXPECT_EQ(code_of([&] { ArchGraph::build("x", nodes); }), ErrorCode::Cycle);
}

TEST(TopoOrder, DiamondBreaksTiesById) {
  const ArchGraph g = parse_arch(
      "input 2\n"
      "conv a k=1 s=1 d=1 p=0 ch=2 from=input\n"
      "conv b k=1 s=1 d=1 p=0 ch=2 from=input\n"
      "add m from=b,a\n");
  EXPECT_EQ(g.topo_order(), (std::vector<int>{0, 1, 2, 3}));

  // declare b first: now it has the smaller id and goes first
  const ArchGraph h = parse_arch(
      "input 2\n"
      "conv b k=1 s=1 d=1 p=0 ch=2 from=input\n"
      "conv a k=1 s=1 d=1 p=0 ch=2 from=input\n"
      "add m from=a,b\n");
  EXPECT_EQ(h.node(h.topo_order()[1]).name, "b");
}

TEST(TopoOrder, StableAcrossCalls) {
  const ArchGraph g = generate_builtin("resnet34");
  EXPECT_EQ(topo_order(g), topo_order(generate_builtin("resnet34")));
}

TEST(Builtins, Vgg16Layout) {
  const ArchGraph g = generate_builtin("vgg16");
  EXPECT_EQ(count_kind(g, LayerKind::Conv), 13);
  EXPECT_EQ(count_kind(g, LayerKind::MaxPool), 5);
  EXPECT_EQ(count_kind(g, LayerKind::GlobalAvgPool), 1);
  // readout is GAP -> Dense -> Softmax at the end of the order
  const auto& order = g.topo_order();
  const std::size_t n = order.size();
  EXPECT_EQ(g.node(order[n - 3]).kind, LayerKind::GlobalAvgPool);
  EXPECT_EQ(g.node(order[n - 2]).kind, LayerKind::Dense);
  EXPECT_EQ(g.node(order[n - 1]).kind, LayerKind::Softmax);
  EXPECT_TRUE(g.is_sequential());
}

TEST(Builtins, ConvCounts) {
  const std::map<std::string, int> expected = {{"vgg11", 8},     {"vgg13", 10},          {"vgg16", 13},
                                               {"vgg19", 16},    {"resnet18", 20},       {"resnet34", 36},
                                               {"resnet18_cifar", 20}, {"resnet34_cifar", 36}};
  for (const auto& [name, convs] : expected) {
    EXPECT_EQ(count_kind(generate_builtin(name), LayerKind::Conv), convs) << name;
  }
  EXPECT_EQ(builtin_names().size(), expected.size());
}

TEST(Builtins, ResidualAddCounts) {
  EXPECT_EQ(count_kind(generate_builtin("resnet18"), LayerKind::Add), 8);
  EXPECT_EQ(count_kind(generate_builtin("resnet34"), LayerKind::Add), 16);
  EXPECT_EQ(count_kind(generate_builtin("resnet18_cifar"), LayerKind::Add), 8);
  EXPECT_EQ(count_kind(generate_builtin("resnet34_cifar"), LayerKind::Add), 16);
}

TEST(Builtins, ResidualMaskRemovesAdds) {
  BuiltinOptions opt;
  opt.residual_mask = {false, false, false, false};
  const ArchGraph g = generate_builtin("resnet18", opt);
  EXPECT_EQ(count_kind(g, LayerKind::Add), 0);
  EXPECT_TRUE(g.is_sequential());

  opt.residual_mask = {true, false, true, false};
  EXPECT_EQ(count_kind(generate_builtin("resnet18", opt), LayerKind::Add), 4);

  opt.residual_mask = {true, false};
  EXPECT_EQ(code_of([&] { generate_builtin("resnet18", opt); }), ErrorCode::InvalidArgument);
}

TEST(Builtins, CifarStem) {
  const ArchGraph g = generate_builtin("resnet18_cifar");
  const LayerNode& stem = g.node(g.conv_ids().front());
  EXPECT_EQ(stem.kernel, 3);
  EXPECT_EQ(stem.stride, 1);
  EXPECT_EQ(count_kind(g, LayerKind::MaxPool), 0);

  const ArchGraph imagenet = generate_builtin("resnet18");
  EXPECT_EQ(imagenet.node(imagenet.conv_ids().front()).kernel, 7);
  EXPECT_EQ(count_kind(imagenet, LayerKind::MaxPool), 1);
}

TEST(Builtins, AddAfterBothBranchTails) {
  for (const char* name : {"resnet18", "resnet34", "resnet18_cifar"}) {
    const ArchGraph g = generate_builtin(name);
    const auto pos = positions(g);
    for (const LayerNode& n : g.nodes()) {
      for (int p : n.inputs) EXPECT_LT(pos.at(p), pos.at(n.id)) << name << ": " << n.name;
      if (n.kind == LayerKind::Add) EXPECT_EQ(n.inputs.size(), 2u);
    }
  }
}

TEST(Builtins, DilationAndBatchnormOptions) {
  BuiltinOptions opt;
  opt.dilation = 2;
  opt.batchnorm = false;
  const ArchGraph g = generate_builtin("vgg16", opt);
  for (int id : g.conv_ids()) EXPECT_EQ(g.node(id).dilation, 2);
  EXPECT_EQ(count_kind(g, LayerKind::BatchNorm), 0);
  EXPECT_EQ(count_kind(generate_builtin("vgg16"), LayerKind::BatchNorm), 13);
}

TEST(Builtins, WidthDivisor) {
  BuiltinOptions opt;
  opt.width_divisor = 8;
  const ArchGraph g = generate_builtin("vgg11", opt);
  EXPECT_EQ(g.node(g.conv_ids().front()).out_channels, 8);
  EXPECT_EQ(g.node(g.conv_ids().back()).out_channels, 64);
}

TEST(Builtins, UnknownName) {
  EXPECT_EQ(code_of([] { generate_builtin("alexnet"); }), ErrorCode::UnknownBuiltin);
}

TEST(Serialize, RoundTripEveryBuiltin) {
  for (const std::string& name : builtin_names()) {
    const ArchGraph g = generate_builtin(name);
    const std::string text = serialize_arch(g);
    const ArchGraph back = parse_arch(text, name);
    EXPECT_TRUE(back.same_structure(g)) << name;
    EXPECT_EQ(serialize_arch(back), text) << name;
    EXPECT_EQ(arch_hash(back), arch_hash(g));
  }
}

TEST(Serialize, RoundTripOptions) {
  BuiltinOptions opt;
  opt.residual_mask = {false, true, false, true};
  opt.batchnorm = false;
  const ArchGraph g = generate_builtin("resnet34_cifar", opt);
  EXPECT_TRUE(parse_arch(serialize_arch(g)).same_structure(g));
}

TEST(Serialize, HashDistinguishesGraphs) {
  EXPECT_NE(arch_hash(generate_builtin("vgg11")), arch_hash(generate_builtin("vgg13")));
  EXPECT_EQ(arch_hash(generate_builtin("vgg11")).size(), 16u);
}
