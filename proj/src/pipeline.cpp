#include "llmseg/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <map>

#include "httplib.h"
#include "llmseg/error.hpp"
#include "llmseg/rng.hpp"

namespace llmseg {

namespace {

const std::vector<std::string>& question_patterns() {
    // {0} / {1} are replaced by category names.
    static const std::vector<std::string> patterns = {
        "Which object in this scene would you reach for if you needed a {0}?",
        "If someone wanted to tidy up, where would they find the {0} in this picture?",
        "What in this image could be used in place of a {0} during a busy morning?",
        "Which items here would you move first to make room, the {0} or the {1}?",
        "What should a guest look for in this room when they need the {0} and the {1}?",
        "Which part of the scene shows something you would use together with a {0}?",
    };
    return patterns;
}

std::string fill_pattern(std::string pattern, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string key = "{" + std::to_string(i) + "}";
        const std::size_t pos = pattern.find(key);
        if (pos != std::string::npos) pattern.replace(pos, key.size(), names[i]);
    }
    return pattern;
}

std::string getenv_or(const char* name, const char* fallback) {
    const char* v = std::getenv(name);
    return v != nullptr ? std::string(v) : std::string(fallback);
}

std::vector<json> json_lines(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<json> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        if (line.find_first_not_of(" \t\r") != std::string::npos) {
            try {
                out.push_back(json::parse(line));
            } catch (const json::parse_error& e) {
                fail(ErrorCode::ParseError, path.string() + ": malformed JSON at byte " + std::to_string(start + e.byte));
            }
        }
        start = end + 1;
    }
    return out;
}

}  // namespace

ImageRef image_ref(const SourceRecord& record) {
    return {record.image_id, record.source, record.width, record.height, record.category_names()};
}

std::string MockProvider::describe_image(const ImageRef& image) {
    Rng rng(stable_hash(image.image_id, seed_ ^ 0x5EEDDE5CULL));
    std::string text = image.source == ImageSource::Egocentric ? "A first-person view of an indoor space."
                                                                : "A photograph of an everyday scene.";
    for (const std::string& c : image.categories) {
        static const char* const kPhrases[] = {" A %s is clearly visible.", " There is a %s near the center.",
                                                " A %s appears at the edge of the frame."};
        const char* phrase = kPhrases[rng.uniform_below(3)];
        std::string sentence(phrase);
        sentence.replace(sentence.find("%s"), 2, c);
        text += sentence;
    }
    return text;
}

std::string MockProvider::generate_questions(const std::string& /*prompt*/, const ImageRef& image) {
    if (image.categories.empty()) fail(ErrorCode::MalformedResponse, "image has no categories to ask about");
    Rng rng(stable_hash(image.image_id, seed_));
    const auto& patterns = question_patterns();
    std::string out;
    for (std::size_t q = 0; q < questions_per_image_; ++q) {
        const std::size_t want = image.categories.size() >= 2 && rng.uniform01() < 0.3 ? 2 : 1;
        std::vector<std::string> picked = image.categories;
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + rng.uniform_below(picked.size() - i);
            std::swap(picked[i], picked[j]);
        }
        picked.resize(want);
        std::string pattern;
        do {
            pattern = patterns[rng.uniform_below(patterns.size())];
        } while ((pattern.find("{1}") != std::string::npos) != (want == 2));
        out += std::to_string(q + 1) + ". " + fill_pattern(pattern, picked) + " || ";
        for (std::size_t i = 0; i < picked.size(); ++i) out += (i > 0 ? "; " : "") + picked[i];
        out += "\n";
    }
    return out;
}

std::unique_ptr<HttpChatProvider> HttpChatProvider::from_environment() {
    const std::string url = getenv_or("LLMSEG_PROVIDER_URL", "");
    if (url.empty()) fail(ErrorCode::ProviderUnavailable, "LLMSEG_PROVIDER_URL is not set");
    constexpr std::string_view scheme = "http://";
    if (!url.starts_with(scheme)) fail(ErrorCode::ProviderUnavailable, "only http:// endpoints are supported");
    std::string rest = url.substr(scheme.size());
    if (const std::size_t slash = rest.find('/'); slash != std::string::npos) rest.resize(slash);
    std::string host = rest;
    int port = 80;
    if (const std::size_t colon = rest.find(':'); colon != std::string::npos) {
        host = rest.substr(0, colon);
        try {
            port = std::stoi(rest.substr(colon + 1));
        } catch (const std::logic_error&) {
            fail(ErrorCode::ProviderUnavailable, "bad port in LLMSEG_PROVIDER_URL");
        }
    }
    return std::unique_ptr<HttpChatProvider>(new HttpChatProvider(
        host, port, getenv_or("LLMSEG_PROVIDER_KEY", ""), getenv_or("LLMSEG_DESCRIBE_MODEL", "llava-v1.5-13b"),
        getenv_or("LLMSEG_QUESTION_MODEL", "gpt-4")));
}

std::string HttpChatProvider::chat(const std::string& model, const std::string& content) const {
    httplib::Client client(host_, port_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const json body{{"model", model}, {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    const auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
    if (!res) fail(ErrorCode::ProviderUnavailable, "no response from " + host_ + ":" + std::to_string(port_));
    if (res->status != 200) fail(ErrorCode::ProviderUnavailable, "provider returned HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedResponse, std::string("unexpected provider payload: ") + e.what());
    }
}

std::string HttpChatProvider::describe_image(const ImageRef& image) {
    // The image itself is resolved server-side from its identifier.
    return chat(describe_model_, "[image:" + image.image_id + "] " + build_describer_prompt());
}

std::string HttpChatProvider::generate_questions(const std::string& prompt, const ImageRef& /*image*/) {
    return chat(question_model_, prompt);
}

std::unique_ptr<Provider> make_provider(std::string_view spec, std::size_t questions_per_image) {
    if (spec.starts_with("mock:")) {
        const std::string seed(spec.substr(5));
        try {
            std::size_t used = 0;
            const unsigned long long value = std::stoull(seed, &used);
            if (used != seed.size()) throw std::invalid_argument(seed);
            return std::make_unique<MockProvider>(value, questions_per_image);
        } catch (const std::logic_error&) {
            fail(ErrorCode::ProviderUnavailable, "mock provider seed must be an unsigned integer");
        }
    }
    if (spec == "http") return HttpChatProvider::from_environment();
    fail(ErrorCode::ProviderUnavailable, "unknown provider '" + std::string(spec) + "'");
}

json pipeline_config_to_json(const PipelineConfig& c) {
    return json{{"counts", {{"simple", c.counts.simple}, {"complex", c.counts.complex}, {"egocentric", c.counts.egocentric}}},
                {"seed", c.seed},
                {"split_ratios", {{"train", c.split_ratios.train}, {"val", c.split_ratios.val}, {"test", c.split_ratios.test}}},
                {"max_in_flight", c.max_in_flight},
                {"retries", c.retries},
                {"questions_per_image", c.questions_per_image}};
}

PipelineConfig pipeline_config_from_json(const json& value) {
    PipelineConfig c;
    try {
        if (!value.is_object()) fail(ErrorCode::InvalidConfig, "pipeline config must be a JSON object");
        for (const auto& [key, v] : value.items()) {
            if (key == "counts") {
                c.counts.simple = v.value("simple", std::size_t{0});
                c.counts.complex = v.value("complex", std::size_t{0});
                c.counts.egocentric = v.value("egocentric", std::size_t{0});
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "split_ratios") {
                c.split_ratios = {v.at("train").get<double>(), v.at("val").get<double>(), v.at("test").get<double>()};
            } else if (key == "max_in_flight") {
                c.max_in_flight = v.get<std::size_t>();
            } else if (key == "retries") {
                c.retries = v.get<std::size_t>();
            } else if (key == "questions_per_image") {
                c.questions_per_image = v.get<std::size_t>();
            } else {
                fail(ErrorCode::InvalidConfig, "unknown pipeline config key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("pipeline config: ") + e.what());
    }
    if (c.max_in_flight == 0) fail(ErrorCode::InvalidConfig, "max_in_flight must be at least 1");
    return c;
}

json prompt_result_to_json(const PromptResult& r) {
    return json{{"image_id", r.image_id},
                {"describer_prompt", r.describer_prompt},
                {"summary", r.summary},
                {"prompt", r.question_prompt},
                {"response", r.response}};
}

PromptResult prompt_result_from_json(const json& value) {
    try {
        return {value.at("image_id").get<std::string>(), value.at("describer_prompt").get<std::string>(),
                value.at("summary").get<std::string>(), value.at("prompt").get<std::string>(),
                value.at("response").get<std::string>()};
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("prompt result: ") + e.what());
    }
}

void write_prompt_results(std::span<const PromptResult> results, const std::filesystem::path& path) {
    std::string text;
    for (const PromptResult& r : results) text += prompt_result_to_json(r).dump() + "\n";
    write_file(path, text);
}

std::vector<PromptResult> read_prompt_results(const std::filesystem::path& path) {
    std::vector<PromptResult> out;
    for (const json& line : json_lines(path)) out.push_back(prompt_result_from_json(line));
    return out;
}

std::vector<PromptResult> run_prompts(std::span<const SourceRecord> records, Provider& provider,
                                      const PromptBundle& bundle, const PipelineConfig& config) {
    const auto query = [&](const SourceRecord& record) {
        const ImageRef ref = image_ref(record);
        for (std::size_t attempt = 0;; ++attempt) {
            try {
                PromptResult r;
                r.image_id = record.image_id;
                r.describer_prompt = bundle.describer_prompt;
                r.summary = provider.describe_image(ref);
                r.question_prompt = build_question_prompt(r.summary, ref.categories, bundle);
                r.response = provider.generate_questions(r.question_prompt, ref);
                try {
                    parse_question_response(r.response, ref.categories);
                } catch (const Error& e) {
                    fail(ErrorCode::MalformedResponse, e.what());
                }
                return r;
            } catch (const Error& e) {
                const bool retryable =
                    e.code() == ErrorCode::ProviderUnavailable || e.code() == ErrorCode::MalformedResponse;
                if (!retryable || attempt >= config.retries) throw;
            }
        }
    };

    std::vector<PromptResult> results;
    results.reserve(records.size());
    for (std::size_t start = 0; start < records.size(); start += config.max_in_flight) {
        const std::size_t end = std::min(records.size(), start + config.max_in_flight);
        std::vector<std::future<PromptResult>> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, query, std::cref(records[i])));
        for (auto& f : batch) results.push_back(f.get());
    }
    std::sort(results.begin(), results.end(),
              [](const PromptResult& a, const PromptResult& b) { return a.image_id < b.image_id; });
    return results;
}

AssembleResult assemble_manifest(std::span<const SourceRecord> records, std::span<const PromptResult> responses,
                                 const PipelineConfig& config) {
    std::map<std::string, const SourceRecord*> by_id;
    for (const SourceRecord& r : records) by_id[r.image_id] = &r;
    std::map<std::string, const PromptResult*> responses_by_id;
    for (const PromptResult& p : responses) responses_by_id[p.image_id] = &p;

    AssembleResult out;
    std::vector<ManifestRecord> assembled;
    for (const auto& [id, record] : by_id) {
        const auto it = responses_by_id.find(id);
        if (it == responses_by_id.end()) {
            out.diagnostics.push_back(id + ": no provider response, skipped");
            continue;
        }
        try {
            const ParsedResponse parsed = parse_question_response(it->second->response, record->category_names());
            for (const std::string& d : parsed.diagnostics) out.diagnostics.push_back(id + ": " + d);
            AssembledRecord a = assemble_record(*record, parsed);
            out.diagnostics.insert(out.diagnostics.end(), a.diagnostics.begin(), a.diagnostics.end());
            assembled.push_back(std::move(a.record));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoQuestionsFound && e.code() != ErrorCode::NoValidPairs) throw;
            out.diagnostics.push_back(id + ": " + e.what());
        }
    }
    if (!assembled.empty()) out.manifest = assign_splits(std::move(assembled), config.split_ratios, config.seed);
    return out;
}

std::vector<SourceRecord> select_records(std::span<const SourceRecord> corpus, const SampleSelection& selection) {
    const std::vector<std::string> ids = selection.all();
    std::vector<SourceRecord> out;
    for (const SourceRecord& r : corpus) {
        if (std::binary_search(ids.begin(), ids.end(), r.image_id)) out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const SourceRecord& a, const SourceRecord& b) { return a.image_id < b.image_id; });
    return out;
}

PipelineResult run_pipeline(std::span<const SourceRecord> corpus, const PipelineConfig& config, Provider& provider,
                            const PromptBundle& bundle) {
    PipelineResult result;
    result.selection = stratified_sample(corpus, config.counts, config.seed);
    const std::vector<SourceRecord> selected = select_records(corpus, result.selection);
    result.prompts = run_prompts(selected, provider, bundle, config);
    result.assembled = assemble_manifest(selected, result.prompts, config);
    return result;
}

}  // namespace llmseg
