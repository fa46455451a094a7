#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmseg/dataset.hpp"

namespace llmseg {

/// What a provider may know about an image. Real backends would resolve the
/// image itself from image_id; the mock only uses the metadata.
struct ImageRef {
    std::string image_id;
    ImageSource source = ImageSource::Photographic;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::string> categories;
};

ImageRef image_ref(const SourceRecord& record);

/// Seam for the captioning model and the question-writing model.
/// Implementations must be safe to call concurrently.
class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string describe_image(const ImageRef& image) = 0;
    /// `image` is context for offline providers; network backends send only the prompt.
    virtual std::string generate_questions(const std::string& prompt, const ImageRef& image) = 0;
};

/// Deterministic stand-in: output depends only on (seed, image metadata),
/// and questions reference only the image's own categories.
class MockProvider final : public Provider {
public:
    explicit MockProvider(std::uint64_t seed, std::size_t questions_per_image = 4)
        : seed_(seed), questions_per_image_(questions_per_image) {}

    std::string describe_image(const ImageRef& image) override;
    std::string generate_questions(const std::string& prompt, const ImageRef& image) override;

private:
    std::uint64_t seed_;
    std::size_t questions_per_image_;
};

/// OpenAI-style chat-completions client over plain HTTP. Configured from
/// LLMSEG_PROVIDER_URL (http://host:port), LLMSEG_PROVIDER_KEY,
/// LLMSEG_DESCRIBE_MODEL and LLMSEG_QUESTION_MODEL.
class HttpChatProvider final : public Provider {
public:
    static std::unique_ptr<HttpChatProvider> from_environment();

    std::string describe_image(const ImageRef& image) override;
    std::string generate_questions(const std::string& prompt, const ImageRef& image) override;

private:
    HttpChatProvider(std::string host, int port, std::string api_key, std::string describe_model,
                     std::string question_model)
        : host_(std::move(host)),
          port_(port),
          api_key_(std::move(api_key)),
          describe_model_(std::move(describe_model)),
          question_model_(std::move(question_model)) {}

    std::string chat(const std::string& model, const std::string& content) const;

    std::string host_;
    int port_;
    std::string api_key_;
    std::string describe_model_;
    std::string question_model_;
};

/// "mock:<seed>" or "http". Throws ProviderUnavailable otherwise.
std::unique_ptr<Provider> make_provider(std::string_view spec, std::size_t questions_per_image = 4);

struct PipelineConfig {
    StratumCounts counts;
    std::uint64_t seed = 0;
    SplitRatios split_ratios;
    std::size_t max_in_flight = 4;
    std::size_t retries = 2;
    std::size_t questions_per_image = 4;
};

json pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const json& value);

struct PromptResult {
    std::string image_id;
    std::string describer_prompt;
    std::string summary;
    std::string question_prompt;
    std::string response;
};

json prompt_result_to_json(const PromptResult& result);
PromptResult prompt_result_from_json(const json& value);
void write_prompt_results(std::span<const PromptResult> results, const std::filesystem::path& path);
std::vector<PromptResult> read_prompt_results(const std::filesystem::path& path);

/// Queries the provider for every record, at most max_in_flight at a time,
/// retrying each record on ProviderUnavailable/MalformedResponse. Results
/// are ordered by image_id.
std::vector<PromptResult> run_prompts(std::span<const SourceRecord> records, Provider& provider,
                                      const PromptBundle& bundle, const PipelineConfig& config);

struct AssembleResult {
    std::vector<ManifestRecord> manifest;  // ordered by image_id
    std::vector<std::string> diagnostics;
};

/// Parses each response against its source record, assembles answer masks,
/// drops records without valid pairs and assigns splits.
AssembleResult assemble_manifest(std::span<const SourceRecord> records, std::span<const PromptResult> responses,
                                 const PipelineConfig& config);

/// Records of `corpus` whose ids appear in `selection`, in id order.
std::vector<SourceRecord> select_records(std::span<const SourceRecord> corpus, const SampleSelection& selection);

struct PipelineResult {
    SampleSelection selection;
    std::vector<PromptResult> prompts;
    AssembleResult assembled;
};

PipelineResult run_pipeline(std::span<const SourceRecord> corpus, const PipelineConfig& config, Provider& provider,
                            const PromptBundle& bundle);

}  // namespace llmseg
