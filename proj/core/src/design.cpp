#include "elmt/design.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <unordered_map>

#include "elmt/errors.hpp"

namespace elmt {

namespace {

int index_of(std::unordered_map<std::string, int>& map, std::vector<std::string>& labels,
             const std::string& label) {
  auto [it, inserted] = map.try_emplace(label, static_cast<int>(labels.size()));
  if (inserted) labels.push_back(label);
  return it->second;
}

void validate(const BlockDesign& design) {
  const DesignMatrix& m = design.matrix;
  long long cell_total = 0;
  for (int i = 0; i < m.n_blocks; ++i) {
    const int b = m.block_size(i);
    if (b < 1 || b > m.n_treatments)
      throw DataError("block '" + design.block_labels[i] + "' has invalid size");
    cell_total += b;
  }
  long long rep_total = 0;
  for (int r : m.replication) rep_total += r;
  if (cell_total != rep_total)
    throw DataError("internal: cell count does not match replication totals");
}

}  // namespace

BlockDesign ingest(const std::vector<Record>& records, DuplicatePolicy policy) {
  if (records.empty()) throw DataError("ingest: no records");

  BlockDesign design;
  std::unordered_map<std::string, int> block_index;
  std::unordered_map<std::string, int> treatment_index;

  // Per block: treatment -> (sum, count) so `average` can merge duplicates.
  struct Cell {
    double sum = 0.0;
    int count = 0;
  };
  std::vector<std::vector<std::pair<int, Cell>>> rows;

  for (const Record& rec : records) {
    if (!std::isfinite(rec.value))
      throw DataError("ingest: non-finite value in block '" + rec.block + "'");
    const int bi = index_of(block_index, design.block_labels, rec.block);
    const int tk = index_of(treatment_index, design.treatment_labels, rec.treatment);
    if (bi == static_cast<int>(rows.size())) rows.emplace_back();
    auto& row = rows[bi];
    auto it = std::find_if(row.begin(), row.end(),
                           [tk](const auto& c) { return c.first == tk; });
    if (it == row.end()) {
      row.push_back({tk, Cell{rec.value, 1}});
    } else {
      if (policy == DuplicatePolicy::error)
        throw DataError("ingest: duplicate cell (" + rec.block + ", " + rec.treatment + ")");
      it->second.sum += rec.value;
      it->second.count += 1;
    }
  }

  DesignMatrix& m = design.matrix;
  m.n_blocks = static_cast<int>(rows.size());
  m.n_treatments = static_cast<int>(design.treatment_labels.size());
  m.replication.assign(m.n_treatments, 0);
  m.row_ptr.assign(m.n_blocks + 1, 0);
  for (int i = 0; i < m.n_blocks; ++i) {
    // Cells within a block in treatment-index order, so ingestion is
    // insensitive to record order.
    std::sort(rows[i].begin(), rows[i].end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    m.row_ptr[i + 1] = m.row_ptr[i] + static_cast<int>(rows[i].size());
    for (const auto& [tk, cell] : rows[i]) {
      m.col.push_back(tk);
      m.value.push_back(cell.sum / cell.count);
      m.replication[tk] += 1;
      if (cell.count > 1) design.duplicate_warnings += 1;
    }
  }

  validate(design);
  return design;
}

BlockDesign read_csv_design(std::istream& in, DuplicatePolicy policy) {
  std::vector<Record> records;
  std::string line;
  bool saw_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 3)
      throw DataError("csv line " + std::to_string(line_no) + ": expected 3 columns, got " +
                      std::to_string(fields.size()));
    if (!saw_header) {
      if (fields[0] != "block" || fields[1] != "treatment" || fields[2] != "value")
        throw DataError("csv: header must be 'block,treatment,value'");
      saw_header = true;
      continue;
    }
    double v = 0.0;
    const char* begin = fields[2].data();
    const char* end = begin + fields[2].size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
      throw DataError("csv line " + std::to_string(line_no) + ": bad value '" + fields[2] + "'");
    records.push_back({fields[0], fields[1], v});
  }
  if (!saw_header) throw DataError("csv: empty input");
  return ingest(records, policy);
}

BlockDesign read_csv_design_file(const std::string& path, DuplicatePolicy policy) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file '" + path + "'");
  return read_csv_design(in, policy);
}

DesignSummary summarize(const BlockDesign& design) {
  const DesignMatrix& m = design.matrix;
  DesignSummary s;
  s.block_sizes.resize(m.n_blocks);
  s.replication.resize(m.n_treatments);
  s.concurrence = Eigen::MatrixXi::Zero(m.n_treatments, m.n_treatments);
  for (int i = 0; i < m.n_blocks; ++i) {
    s.block_sizes[i] = m.block_size(i);
    for (int a = m.row_ptr[i]; a < m.row_ptr[i + 1]; ++a)
      for (int b = a + 1; b < m.row_ptr[i + 1]; ++b) {
        s.concurrence(m.col[a], m.col[b]) += 1;
        s.concurrence(m.col[b], m.col[a]) += 1;
      }
  }
  for (int k = 0; k < m.n_treatments; ++k) {
    s.replication[k] = m.replication[k];
    s.concurrence(k, k) = m.replication[k];
  }
  s.d_hat = s.concurrence.cast<double>() / static_cast<double>(m.n_blocks);
  s.min_rep_fraction =
      m.n_treatments == 0
          ? 0.0
          : static_cast<double>(s.replication.minCoeff()) / static_cast<double>(m.n_blocks);
  return s;
}

Connectivity connectivity(const BlockDesign& design) {
  const DesignMatrix& m = design.matrix;
  Connectivity out;
  out.component.assign(m.n_treatments, -1);

  // Union-find over treatments; each block links its members.
  std::vector<int> parent(m.n_treatments);
  for (int k = 0; k < m.n_treatments; ++k) parent[k] = k;
  auto find = [&](int k) {
    while (parent[k] != k) {
      parent[k] = parent[parent[k]];
      k = parent[k];
    }
    return k;
  };
  for (int i = 0; i < m.n_blocks; ++i)
    for (int a = m.row_ptr[i] + 1; a < m.row_ptr[i + 1]; ++a) {
      const int ra = find(m.col[m.row_ptr[i]]);
      const int rb = find(m.col[a]);
      if (ra != rb) parent[rb] = ra;
    }

  int next_id = 0;
  std::vector<int> root_id(m.n_treatments, -1);
  for (int k = 0; k < m.n_treatments; ++k) {
    const int root = find(k);
    if (root_id[root] < 0) root_id[root] = next_id++;
    out.component[k] = root_id[root];
  }
  out.n_components = next_id;
  return out;
}

BlockDesign generate_pair_design(int p, int reps_per_pair) {
  if (p < 2) throw DataError("generate_pair_design: need at least 2 treatments");
  if (reps_per_pair < 1) throw DataError("generate_pair_design: need at least 1 rep per pair");

  BlockDesign design;
  DesignMatrix& m = design.matrix;
  m.n_treatments = p;
  m.replication.assign(p, 0);
  design.treatment_labels.reserve(p);
  for (int k = 0; k < p; ++k) design.treatment_labels.push_back("t" + std::to_string(k + 1));

  m.row_ptr.push_back(0);
  for (int rep = 0; rep < reps_per_pair; ++rep)
    for (int k = 0; k < p; ++k)
      for (int l = k + 1; l < p; ++l) {
        m.col.push_back(k);
        m.col.push_back(l);
        m.value.push_back(0.0);
        m.value.push_back(0.0);
        m.replication[k] += 1;
        m.replication[l] += 1;
        m.row_ptr.push_back(static_cast<int>(m.col.size()));
        design.block_labels.push_back("b" + std::to_string(m.n_blocks + 1));
        m.n_blocks += 1;
      }

  validate(design);
  return design;
}

}  // namespace elmt
