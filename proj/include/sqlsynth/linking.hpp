#pragma once

#include "sqlsynth/llm_gateway.hpp"
#include "sqlsynth/schema.hpp"
#include "sqlsynth/synthesis.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sqlsynth {

// ---------------------------------------------------------------------------
// Keywords

struct KeywordSet {
    std::vector<std::string> keywords;
    // Unordered pairs with first <= second, sorted; {(k, k)} for a single keyword.
    std::vector<std::pair<std::string, std::string>> pairs;
};

// Deduplicates case-insensitively (first spelling wins) and builds the pairs.
KeywordSet make_keyword_set(const std::vector<std::string>& keywords);

// Stopword-filtered lowercase content words of question and hint.
std::vector<std::string> fallback_keywords(std::string_view question, std::string_view hint);

// Model extraction when a gateway is given; the fallback tokenizer otherwise or on failure.
KeywordSet extract_keywords(std::string_view question, std::string_view hint, LlmGateway* gateway,
                            std::vector<Diagnostic>* diagnostics = nullptr);

// ---------------------------------------------------------------------------
// Example retrieval

struct Scored {
    std::string id;
    double score = 0;
};

class Retriever {
public:
    virtual ~Retriever() = default;

    // Documents ranked by descending score, ties by example id. Zero-score
    // documents are left out unless they are among `candidates`.
    virtual std::vector<Scored> rank(std::string_view query,
                                     const std::vector<std::string>* candidates = nullptr) const = 0;

    virtual const T2SExample& example(const std::string& id) const = 0;
    virtual std::size_t size() const = 0;
};

// Lowercase alphanumeric tokens of question followed by SQL.
std::vector<std::string> document_tokens(const T2SExample& e);

class Bm25Index : public Retriever {
public:
    static constexpr int format_version = 1;

    Bm25Index(std::vector<T2SExample> corpus, double k1 = 1.2, double b = 0.75);  // throws on empty corpus

    std::vector<Scored> rank(std::string_view query, const std::vector<std::string>* candidates = nullptr) const override;
    const T2SExample& example(const std::string& id) const override;
    std::size_t size() const override { return corpus_.size(); }

    // Score of one document for the distinct tokens of `query`.
    double score(std::string_view query, std::size_t doc) const;
    double idf(const std::string& term) const;
    double k1() const { return k1_; }
    double b() const { return b_; }
    double average_length() const { return avgdl_; }
    const std::string& corpus_digest() const { return digest_; }

    void save(const std::filesystem::path& path) const;
    // Rejects files whose digest or version does not match.
    static Bm25Index load(const std::filesystem::path& path);

private:
    struct Posting {
        std::size_t doc;
        std::size_t tf;
    };

    std::vector<T2SExample> corpus_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::size_t> doc_len_;
    double avgdl_ = 0;
    double k1_;
    double b_;
    std::string digest_;
};

// Cosine similarity over feature-hashed token and character-trigram vectors.
class HashingVectorIndex : public Retriever {
public:
    static constexpr std::size_t default_dimensions = 1024;

    explicit HashingVectorIndex(std::vector<T2SExample> corpus, std::size_t dimensions = default_dimensions);

    std::vector<Scored> rank(std::string_view query, const std::vector<std::string>* candidates = nullptr) const override;
    const T2SExample& example(const std::string& id) const override;
    std::size_t size() const override { return corpus_.size(); }

    std::vector<float> embed(std::string_view text) const;

private:
    std::vector<T2SExample> corpus_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::vector<std::vector<float>> vectors_;
    std::size_t dims_;
};

// Top-1 per pair (pairs taken in sorted order); first occurrence kept.
std::vector<std::string> retrieve_per_pair(const Retriever& retriever,
                                           const std::vector<std::pair<std::string, std::string>>& pairs);

// Candidates re-ranked against the full question; at most k.
std::vector<std::string> select_topk(const Retriever& retriever, std::string_view question,
                                     const std::vector<std::string>& candidates, std::size_t k);

// ---------------------------------------------------------------------------
// Entity matching

struct ValueIndexConfig {
    std::size_t permutations = 128;
    std::size_t bands = 32;
    std::size_t rows = 4;
    double threshold = 0.4;
    std::uint64_t seed = 0x5eed;
    std::size_t max_value_chars = 200;  // longer cells are skipped

    void validate() const;
};

struct EntityHit {
    std::string table;
    std::string column;
    std::string value;
    double score = 0;
};

class ValueIndex {
public:
    struct Entry {
        std::string table;
        std::string column;
        std::string value;
    };

    // Distinct text cells of every table in `schema`.
    static ValueIndex build(const std::filesystem::path& db_path, const DatabaseSchema& schema,
                            const ValueIndexConfig& config = {});
    ValueIndex(std::vector<Entry> entries, const ValueIndexConfig& config);

    // Hits with estimated Jaccard >= threshold, by descending score.
    std::vector<EntityHit> match(const std::vector<std::string>& keywords) const;

    std::vector<std::uint64_t> signature(std::string_view text) const;
    static double estimate(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

    const std::vector<Entry>& entries() const { return entries_; }
    const ValueIndexConfig& config() const { return config_; }

    void save(const std::filesystem::path& path) const;
    static ValueIndex load(const std::filesystem::path& path);

private:
    std::vector<Entry> entries_;
    ValueIndexConfig config_;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> hash_params_;
    std::vector<std::vector<std::uint64_t>> signatures_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets_;
};

// Character 3-grams of the lowercased text; shorter strings are one shingle.
std::set<std::string> shingles(std::string_view text);
double exact_jaccard(std::string_view a, std::string_view b);

// ---------------------------------------------------------------------------
// Column filtering and schema assembly

std::vector<std::string> filter_columns_llm(const DatabaseSchema& schema, std::string_view table,
                                            std::string_view question_and_hint,
                                            const std::vector<T2SExample>& examples, LlmGateway& gateway,
                                            std::vector<Diagnostic>& diagnostics);

enum class Provenance { connection, retrieval, entity, llm };
std::string to_string(Provenance p);

struct FilteredColumn {
    std::string name;
    std::set<Provenance> provenance;
};

struct FilteredSchema {
    // Every schema table in schema order; columns in table order.
    std::vector<std::pair<std::string, std::vector<FilteredColumn>>> tables;

    std::set<ColumnRef> columns() const;
    std::set<std::string> table_names() const;
    bool contains(const ColumnRef& c) const;
};

FilteredSchema assemble_filtered_schema(const DatabaseSchema& schema,
                                        const std::map<std::string, std::vector<std::string>>& llm_selections,
                                        const std::vector<EntityHit>& entity_hits,
                                        const std::set<ColumnRef>& retrieval_columns);

nlohmann::ordered_json to_json(const FilteredSchema& fs);
FilteredSchema filtered_schema_from_json(const nlohmann::json& j);

// Prompt text of a filtered schema, in the sub-schema rendering.
std::string render_filtered_schema(const DatabaseSchema& schema, const FilteredSchema& fs);

// ---------------------------------------------------------------------------
// End-to-end linking

enum class RetrieverKind { bm25, vec };

struct LinkingMode {
    RetrieverKind retriever = RetrieverKind::bm25;
    bool all = false;  // every retrieved example instead of the top k
    bool llm = false;  // LLM column filter over the top k

    friend bool operator==(const LinkingMode&, const LinkingMode&) = default;
};

LinkingMode linking_mode_from_string(std::string_view s);  // e.g. "bm25-top6+llm"
std::string to_string(const LinkingMode& m);
std::vector<std::string> linking_mode_names();

struct LinkingContext {
    const DatabaseSchema& schema;
    const Retriever& retriever;
    const ValueIndex* values = nullptr;
    LlmGateway* gateway = nullptr;  // keywords and column filtering
    LinkingMode mode;
    std::size_t top_k = 6;
};

struct LinkingResult {
    KeywordSet keywords;
    std::vector<std::string> retrieved_ids;
    std::vector<std::string> context_ids;  // examples whose columns or text fed the schema
    std::vector<EntityHit> entities;
    FilteredSchema filtered;
    std::vector<Diagnostic> diagnostics;
};

LinkingResult link_question(const LinkingContext& ctx, std::string_view question, std::string_view hint);

std::string question_and_hint(std::string_view question, std::string_view hint);

}  // namespace sqlsynth
