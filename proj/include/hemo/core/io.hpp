#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "hemo/core/rng.hpp"
#include "hemo/core/types.hpp"

namespace hemo::io {

// Dataset container: a directory holding manifest.json plus one raw
// little-endian array per field (float32 for signal/parameter data, int64
// for per-record seeds), row-major, one row per record.

void write_dataset(const std::vector<LabeledSimRecord>& records,
                   const std::filesystem::path& dir,
                   const nlohmann::json& extra = {});
void write_dataset(const std::vector<PairedSegment>& records,
                   const std::filesystem::path& dir,
                   const nlohmann::json& extra = {});
void write_dataset(const std::vector<SubjectSeries>& subjects,
                   const std::filesystem::path& dir,
                   const nlohmann::json& extra = {});

std::string dataset_type(const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);

std::vector<LabeledSimRecord> read_labeled_sim(const std::filesystem::path& dir);
std::vector<PairedSegment> read_paired(const std::filesystem::path& dir);
std::vector<SubjectSeries> read_subject_series(const std::filesystem::path& dir);

// Deterministic splitting. Partition sizes: all partitions except the first
// take lround(fraction * n); the first absorbs the remainder. With
// by_subject the fractions apply to whole subjects.
std::vector<double> check_fractions(const std::vector<double>& fractions);
std::vector<int> partition_sizes(int n, const std::vector<double>& fractions);

template <class Rec, class SubjectFn>
std::vector<std::vector<Rec>> split_records(const std::vector<Rec>& records,
                                            const std::vector<double>& fractions,
                                            std::uint64_t seed, bool by_subject,
                                            SubjectFn subject_of) {
  const auto fr = check_fractions(fractions);
  const int parts = static_cast<int>(fr.size());
  std::vector<std::vector<Rec>> out(static_cast<std::size_t>(parts));
  if (records.empty()) return out;

  Rng rng(derive_seed(seed, "split"));
  if (!by_subject) {
    std::vector<int> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    rng.shuffle(idx);
    const auto sizes = partition_sizes(static_cast<int>(records.size()), fr);
    std::size_t pos = 0;
    for (int p = 0; p < parts; ++p) {
      std::vector<int> chosen(idx.begin() + static_cast<long>(pos),
                              idx.begin() + static_cast<long>(pos + sizes[p]));
      std::sort(chosen.begin(), chosen.end());
      for (int i : chosen) out[static_cast<std::size_t>(p)].push_back(records[static_cast<std::size_t>(i)]);
      pos += static_cast<std::size_t>(sizes[p]);
    }
    return out;
  }

  std::vector<std::string> subjects;
  for (const auto& r : records) {
    const std::optional<std::string> s = subject_of(r);
    if (!s) throw std::invalid_argument("split by_subject: record lacks subject_id");
    if (std::find(subjects.begin(), subjects.end(), *s) == subjects.end()) {
      subjects.push_back(*s);
    }
  }
  rng.shuffle(subjects);
  const auto sizes = partition_sizes(static_cast<int>(subjects.size()), fr);
  std::vector<int> part_of_subject(subjects.size());
  {
    std::size_t pos = 0;
    for (int p = 0; p < parts; ++p) {
      for (int i = 0; i < sizes[p]; ++i) part_of_subject[pos++] = p;
    }
  }
  for (const auto& r : records) {
    const std::string s = *subject_of(r);
    const auto it = std::find(subjects.begin(), subjects.end(), s);
    out[static_cast<std::size_t>(
           part_of_subject[static_cast<std::size_t>(it - subjects.begin())])]
        .push_back(r);
  }
  return out;
}

inline std::vector<std::vector<LabeledSimRecord>> split_dataset(
    const std::vector<LabeledSimRecord>& records,
    const std::vector<double>& fractions, std::uint64_t seed) {
  return split_records(records, fractions, seed, false,
                       [](const LabeledSimRecord&) { return std::optional<std::string>{}; });
}

inline std::vector<std::vector<PairedSegment>> split_dataset(
    const std::vector<PairedSegment>& records,
    const std::vector<double>& fractions, std::uint64_t seed,
    bool by_subject = false) {
  return split_records(records, fractions, seed, by_subject,
                       [](const PairedSegment& r) { return r.subject_id; });
}

// Model checkpoints reuse the same container: weights as named float32
// arrays plus the JSON architecture config and final metrics.

enum class ModelKind { Cvae, Npe, DetCnn };
std::string model_kind_name(ModelKind k);
ModelKind model_kind_from(const std::string& name);

struct NamedArray {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<float> data;  // row-major, rows*cols
};

struct Checkpoint {
  ModelKind kind = ModelKind::Cvae;
  std::vector<NamedArray> weights;
  nlohmann::json config;
  nlohmann::json metrics;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint read_checkpoint(const std::filesystem::path& dir);

}  // namespace hemo::io
