#pragma once

// Static receptive-field propagation over an ArchGraph, the border layer that
// splits the conv stack into solving and compressing stages, and single-edit
// surgery suggestions that push the border deeper.

#include <optional>
#include <string>
#include <vector>

#include "layerscope/arch_graph.hpp"
#include <json.hpp>

namespace layerscope {

struct RFResult {
  std::vector<long long> r;     // receptive field in input pixels, by node id
  std::vector<long long> jump;  // input pixels per feature-map step, by node id
  std::vector<int> spatial;     // output side length by node id; empty without an input size
  std::optional<int> input_size;

  long long r_of(int id) const { return r.at(static_cast<std::size_t>(id)); }
  long long jump_of(int id) const { return jump.at(static_cast<std::size_t>(id)); }
};

/// Receptive fields with r = r_prev + (k_eff - 1) * jump_prev and
/// jump = jump_prev * stride. Merge nodes take the largest incoming r and
/// require equal incoming jumps (Error JumpMismatch otherwise). When
/// `input_size` is given, spatial sizes are propagated as well (Error
/// ShapeMismatch when a map collapses below one pixel).
RFResult compute_rf(const ArchGraph& graph, std::optional<int> input_size = std::nullopt);

/// Output side length per node for a square input.
std::vector<int> propagate_spatial(const ArchGraph& graph, int input_size);

/// Id of the last Conv node in topological order.
int final_conv(const ArchGraph& graph);

struct BorderReport {
  std::optional<int> border_node;
  int input_size = 0;
  std::vector<int> solving;      // conv ids before the border, topological order
  std::vector<int> compressing;  // conv ids at and after the border
};

/// First conv (topological order) with a predecessor whose r exceeds input_size.
BorderReport border_layer(const ArchGraph& graph, const RFResult& rf, int input_size);

enum class EditKind { StemStride, StemKernel, CompactStem, RemoveDownsample };

struct SurgeryEdit {
  EditKind kind;
  std::string target;       // node the edit applies to
  std::string description;
  ArchGraph graph;          // edited architecture
  long long final_r = 0;    // r of the last conv after the edit
  std::optional<std::string> border;  // border node name after the edit
  std::size_t solving_convs = 0;
};

std::string_view edit_kind_name(EditKind kind);

/// Candidate single edits that move the border later (or remove it), most
/// solving-stage convs first. Empty when the border is absent or no edit helps.
std::vector<SurgeryEdit> suggest_surgery(const ArchGraph& graph, int input_size);

/// One entry per node: name, kind, r, jump (and spatial when known).
nlohmann::json rf_to_json(const ArchGraph& graph, const RFResult& rf);
nlohmann::json border_to_json(const ArchGraph& graph, const BorderReport& border);

/// Static description of the receptive-field recurrence and the published
/// reference values it is checked against.
nlohmann::json rf_formula_note(const ArchGraph& graph, const RFResult& rf);

}  // namespace layerscope
