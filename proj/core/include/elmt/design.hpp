#ifndef ELMT_DESIGN_HPP
#define ELMT_DESIGN_HPP

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

namespace elmt {

// Observed cells of a block design in compressed row form. Row i holds the
// treatments observed in block i and their responses; `replication[k]` is the
// number of blocks containing treatment k.
struct DesignMatrix {
  int n_blocks = 0;
  int n_treatments = 0;
  std::vector<int> row_ptr;      // size n_blocks + 1
  std::vector<int> col;          // treatment index per observed cell
  std::vector<double> value;     // response per observed cell
  std::vector<int> replication;  // size n_treatments

  int cells() const { return static_cast<int>(col.size()); }
  int block_size(int i) const { return row_ptr[i + 1] - row_ptr[i]; }
};

struct Record {
  std::string block;
  std::string treatment;
  double value = 0.0;
};

enum class DuplicatePolicy { error, average };

// A validated block design. Immutable after construction; safe to share
// across threads.
struct BlockDesign {
  DesignMatrix matrix;
  std::vector<std::string> block_labels;      // dense index -> original label
  std::vector<std::string> treatment_labels;  // dense index -> original label
  int duplicate_warnings = 0;                 // cells merged under `average`

  int n_blocks() const { return matrix.n_blocks; }
  int n_treatments() const { return matrix.n_treatments; }
};

struct DesignSummary {
  Eigen::VectorXi block_sizes;   // b_i, row sums of the incidence matrix
  Eigen::VectorXi replication;   // r_k, column sums
  Eigen::MatrixXi concurrence;   // pair counts; diagonal equals replication
  Eigen::MatrixXd d_hat;         // (1/n) C'C
  double min_rep_fraction = 0.0; // min_k r_k / n, a small-sample diagnostic
};

struct Connectivity {
  int n_components = 0;
  std::vector<int> component;  // per-treatment component id, 0-based
  bool connected() const { return n_components <= 1; }
};

// Build a design from raw (block, treatment, value) records. Labels are
// mapped to dense 0-based indices in first-appearance order. Under the
// `average` policy, repeated cells are replaced by their mean and counted in
// duplicate_warnings; under `error` they throw DataError.
BlockDesign ingest(const std::vector<Record>& records, DuplicatePolicy policy);

// CSV with header `block,treatment,value`; blank lines ignored; any other
// column count is an error.
BlockDesign read_csv_design(std::istream& in, DuplicatePolicy policy);
BlockDesign read_csv_design_file(const std::string& path, DuplicatePolicy policy);

DesignSummary summarize(const BlockDesign& design);

// Connected components of the graph on treatments with an edge wherever two
// treatments share a block. Disconnection is reported, not fatal.
Connectivity connectivity(const BlockDesign& design);

// All-pairs block design: every unordered pair of the p treatments forms a
// block, repeated reps_per_pair times. Values are zero-initialized; callers
// that need responses fill them in (see simulate).
BlockDesign generate_pair_design(int p, int reps_per_pair);

}  // namespace elmt

#endif
