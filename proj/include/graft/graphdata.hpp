#pragma once

// Graph data model, JSONL ingestion and synthetic task generators.

#include <cstdint>
#include <string>
#include <vector>

namespace graft {

enum class Split { train, valid, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct UndirectedEdge {
  int a = 0;  // a < b, no self loops
  int b = 0;
  std::vector<double> features;
};

// Missing labels are stored as -1.
struct LabeledGraph {
  std::vector<std::vector<double>> node_features;  // n x d_in
  std::vector<UndirectedEdge> edges;               // stored once, a < b
  std::vector<int> labels;                         // T entries of {0, 1, -1}
  Split split = Split::train;

  // Direction-expanded view, rebuilt on construction/load and sorted by
  // (dst, src) for deterministic aggregation.
  std::vector<int> dir_src;
  std::vector<int> dir_dst;
  std::vector<int> dir_edge;  // index into `edges` for the feature vector

  int num_nodes() const { return static_cast<int>(node_features.size()); }
  int num_directed_edges() const { return static_cast<int>(dir_src.size()); }
  void expand_directions();

  // Flattened row-major feature matrices for the tape.
  std::vector<double> node_feature_matrix() const;
  std::vector<double> directed_edge_feature_matrix(int d_e) const;
};

struct Dataset {
  std::string name;
  int d_in = 0;
  int d_e = 0;
  int T = 0;
  std::vector<LabeledGraph> graphs;

  std::vector<int> split_indices(Split s) const;
};

// JSONL file: header line {"d_in","d_e","T","name"}, then one graph object
// per line. Validation failures throw std::runtime_error with the line number.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

enum class SyntheticTask { triangle_detect, degree_parity, motif_count_threshold };

SyntheticTask task_from_name(const std::string& name);
std::string task_name(SyntheticTask t);

// Deterministic for a fixed seed; labels computed by exact combinatorial
// definitions; splits 80/10/10 by index. count must be >= 10.
Dataset generate_synthetic(SyntheticTask task, int count, std::uint64_t seed);

// Brute-force label oracles used by tests and the generator itself.
int count_triangles(int n, const std::vector<UndirectedEdge>& edges);
int max_degree(int n, const std::vector<UndirectedEdge>& edges);

}  // namespace graft
