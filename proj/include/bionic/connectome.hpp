#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bionic/rng.hpp"
#include "bionic/tensor.hpp"

namespace bionic {

enum class BroadType { Excitatory, Inhibitory, Nonneuronal };

const char* broad_type_name(BroadType t);

struct CellRecord {
    std::int64_t cell_id = 0;
    BroadType broad_type = BroadType::Excitatory;
    std::string cell_type;
    std::array<double, 3> position_um{};
    std::string source;
};

struct CellTable {
    std::vector<CellRecord> cells;
    std::vector<std::string> warnings;
};

struct SynapseEdge {
    std::int64_t pre_id = 0;
    std::int64_t post_id = 0;
    std::int64_t syn_count = 0;
    double total_size = 0.0;
};

struct SynapseTable {
    std::vector<SynapseEdge> edges;
};

inline constexpr const char* kDefaultColumnSource = "allen_v1_column_types_slanted_ref";
inline constexpr std::array<const char*, 4> kLayerNames{"A", "B", "C", "D"};

// Cell-type maps for the V1 column export: broad type per cell type and the
// hypothesized-layer assignment of the excitatory types.
bool is_known_cell_type(const std::string& cell_type);
BroadType broad_type_for_cell_type(const std::string& cell_type);
int layer_for_excitatory_type(const std::string& cell_type);  // 0..3

struct LayerPartition {
    std::array<std::vector<std::int64_t>, 4> layers;  // ascending cell_id
    std::vector<std::int64_t> inhibitory;             // ascending cell_id
    std::vector<std::string> warnings;

    std::array<int, 4> sizes() const;
};

// Dense adjacency over the column's neurons (excitatory + inhibitory),
// indexed by ascending cell_id. count[post][pre] sums synapse counts;
// size[post][pre] sums synapse sizes.
struct AdjacencyMatrices {
    std::vector<std::int64_t> ids;
    int n = 0;
    std::vector<std::int32_t> count;
    std::vector<double> size;

    std::int32_t count_at(int post, int pre) const { return count[static_cast<std::size_t>(post) * n + pre]; }
    double size_at(int post, int pre) const { return size[static_cast<std::size_t>(post) * n + pre]; }
    int index_of(std::int64_t id) const;  // -1 if absent
};

struct MaskOptions {
    // I_k default counts distinct inhibitory presynaptic partners; with
    // multiplicity on it sums synapse counts instead.
    bool count_multiplicity = false;
};

struct ConnectivityMasks {
    std::array<int, 4> sizes{};
    std::array<std::vector<std::uint8_t>, 3> inter;       // M_k: sizes[k+1] x sizes[k]
    std::array<std::vector<std::uint8_t>, 4> intra;       // N_k: sizes[k] x sizes[k], zero diagonal
    std::array<std::vector<std::int32_t>, 4> inhib_counts;  // I_k

    double inter_density(int k) const;
    double intra_density(int k) const;
    std::uint64_t digest() const;
};

CellTable load_cells(const std::string& path);
SynapseTable load_synapses(const std::string& path);
CellTable select_column(const CellTable& cells, const std::string& source_tag = kDefaultColumnSource);
LayerPartition partition_layers(const CellTable& column_cells);
AdjacencyMatrices build_adjacency(const SynapseTable& edges, const CellTable& column_cells);
ConnectivityMasks derive_masks(const AdjacencyMatrices& adj, const LayerPartition& partition,
                               const MaskOptions& options = {});

// Full pipeline: load, select the column, partition, derive masks.
ConnectivityMasks load_connectome(const std::string& cells_csv, const std::string& synapses_csv,
                                  const MaskOptions& options = {},
                                  const std::string& source_tag = kDefaultColumnSource);

struct SyntheticConnectomeSpec {
    std::array<int, 4> layer_sizes{20, 30, 15, 25};
    double density = 0.3;
    int inhibitory_count = 8;
    // Emit exactly the V1 column's per-type cell counts (layer_sizes ignored).
    bool paper_shape = false;
    std::uint64_t seed = 1;
};

struct SyntheticConnectome {
    ConnectivityMasks masks;  // ground truth for round-trip checks
    std::string cells_csv;
    std::string synapses_csv;
    int cell_count = 0;
    int edge_rows = 0;
};

SyntheticConnectome generate_synthetic_connectome(const std::string& out_dir,
                                                  const SyntheticConnectomeSpec& spec);

struct MaskReport {
    std::array<int, 4> layer_sizes{};
    std::array<double, 3> inter_density{};
    std::array<double, 4> intra_density{};
    std::array<double, 4> inhib_mean{};
    std::array<std::int32_t, 4> inhib_max{};
    std::array<std::vector<std::int64_t>, 4> inhib_histogram;  // count per I value
    std::vector<std::string> warnings;
};

MaskReport mask_report(const ConnectivityMasks& masks);
std::string mask_report_text(const MaskReport& report);

}  // namespace bionic
