#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmseg/io.hpp"
#include "llmseg/mask.hpp"

namespace llmseg {

enum class ImageSource { Photographic, Egocentric };

std::string_view image_source_name(ImageSource source);
ImageSource parse_image_source(std::string_view name);

struct CategoryInstances {
    std::string name;
    std::vector<BinaryMask> instances;
};

/// One image of the upstream segmentation corpus with its per-category
/// instance masks.
struct SourceRecord {
    std::string image_id;
    ImageSource source = ImageSource::Photographic;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<CategoryInstances> categories;

    std::vector<std::string> category_names() const;
    void validate() const;
};

json source_record_to_json(const SourceRecord& record);
SourceRecord source_record_from_json(const json& value);
std::vector<SourceRecord> read_source_corpus(const std::filesystem::path& path);
void write_source_corpus(std::span<const SourceRecord> records, const std::filesystem::path& path);

// ------------------------------------------------------------- sampling

enum class Complexity { Simple, Complex, Reject };

/// 2–5 distinct categories → simple, 6 or more → complex, otherwise reject.
Complexity classify_complexity(const SourceRecord& record);

struct StratumCounts {
    std::size_t simple = 0;
    std::size_t complex = 0;
    std::size_t egocentric = 0;
};

struct SampleSelection {
    std::vector<std::string> simple;
    std::vector<std::string> complex;
    std::vector<std::string> egocentric;

    /// All selected ids, sorted.
    std::vector<std::string> all() const;
};

/// Photographic images are split into simple/complex strata; egocentric
/// images qualify with more than two categories. Each stratum (candidates
/// sorted by image_id) is sampled without replacement by a Fisher–Yates
/// prefix shuffle; one generator seeded with `seed` serves the strata in
/// the order simple, complex, egocentric.
SampleSelection stratified_sample(std::span<const SourceRecord> corpus, const StratumCounts& counts,
                                  std::uint64_t seed);

/// {"simple": [ids], "complex": [ids], "egocentric": [ids]}
json selection_to_json(const SampleSelection& selection);
SampleSelection selection_from_json(const json& value);

// -------------------------------------------------------------- prompts

inline constexpr std::string_view kSummaryPlaceholder = "<summary>";
inline constexpr std::string_view kObjectsPlaceholder = "<important_objects>";

struct PromptBundle {
    std::string describer_prompt;
    std::string question_template;

    /// Throws InvalidTemplate unless each placeholder occurs exactly once.
    static PromptBundle from_template(std::string question_template);
};

PromptBundle load_prompt_bundle(const std::filesystem::path& template_path);

std::string build_describer_prompt();

/// Single-pass substitution of the two placeholders; objects are joined
/// with ", ". Substituted text is never re-expanded.
std::string build_question_prompt(std::string_view summary, std::span<const std::string> objects,
                                  const PromptBundle& bundle);

struct ParsedQuestion {
    std::string question;
    std::vector<std::string> categories;  // resolved against the known set
    std::vector<std::string> unresolved;
};

struct ParsedResponse {
    std::vector<ParsedQuestion> questions;
    std::vector<std::string> diagnostics;
};

/// Parses lines of the form "N. <question> || <cat1; cat2>". Malformed
/// lines are skipped with a diagnostic. Throws NoQuestionsFound when no
/// line parses.
ParsedResponse parse_question_response(std::string_view response, std::span<const std::string> known_categories);

// ------------------------------------------------------------- manifest

enum class Split { Unassigned, Train, Val, Test };

std::string_view split_name(Split split);

struct QAPair {
    std::string question;
    BinaryMask answer_mask;
    std::vector<std::string> target_categories;
};

struct ManifestRecord {
    std::string image_id;
    ImageSource source = ImageSource::Photographic;
    std::size_t width = 0;
    std::size_t height = 0;
    Split split = Split::Unassigned;
    std::vector<QAPair> qa_pairs;
};

struct AssembledRecord {
    ManifestRecord record;
    std::vector<std::string> diagnostics;
};

/// Answer masks are the union of every instance of the target categories.
/// Pairs with no resolvable category are dropped; NoValidPairs if none remain.
AssembledRecord assemble_record(const SourceRecord& source, const ParsedResponse& parsed);

struct SplitRatios {
    double train = 11.0 / 14.0;
    double val = 1.0 / 14.0;
    double test = 2.0 / 14.0;
};

/// Seeded shuffle, then contiguous train/val/test partition with
/// floor(n·ratio) val and test records and the rounding residue in train.
std::vector<ManifestRecord> assign_splits(std::vector<ManifestRecord> records, const SplitRatios& ratios,
                                          std::uint64_t seed);

json manifest_record_to_json(const ManifestRecord& record);
ManifestRecord manifest_record_from_json(const json& value);
std::string encode_manifest(std::span<const ManifestRecord> records);
void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

struct DatasetStats {
    std::size_t images = 0;
    std::size_t pairs = 0;
    double avg_pairs_per_image = 0.0;
    double avg_question_words = 0.0;
    std::size_t distinct_categories = 0;
    std::size_t train_images = 0;
    std::size_t val_images = 0;
    std::size_t test_images = 0;
};

/// Words are whitespace-separated tokens.
std::size_t count_words(std::string_view text);
DatasetStats dataset_stats(std::span<const ManifestRecord> manifest);
json stats_to_json(const DatasetStats& stats);
/// Human-readable summary with averages rounded to two decimals.
std::string format_stats(const DatasetStats& stats);

/// Random source corpus of rectangle instances over a small category
/// vocabulary, for exercising the pipeline without real annotations.
std::vector<SourceRecord> synth_source_corpus(std::size_t n, std::uint64_t seed);

}  // namespace llmseg
