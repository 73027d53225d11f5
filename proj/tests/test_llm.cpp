#include "sqlsynth/llm_gateway.hpp"
#include "sqlsynth/prompts.hpp"
#include "sqlsynth/text_util.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <random>
#include <thread>

using namespace sqlsynth;
using testing_support::TempDir;

namespace {

LlmRequest request(std::string prompt, double temperature = 0.0, std::string template_id = "t") {
    LlmRequest r;
    r.template_id = std::move(template_id);
    r.rendered_prompt = std::move(prompt);
    r.temperature = temperature;
    return r;
}

GatewayConfig fast_config(GatewayMode mode) {
    GatewayConfig c;
    c.mode = mode;
    c.initial_backoff = std::chrono::milliseconds(1);
    c.requests_per_second = 0;
    return c;
}

}  // namespace

TEST(Prompts, SqlGenerationRendersDatabaseName) {
    const auto text = render_prompt(templates::sql_generation,
                                    {{"DB_ID", "california_schools"}, {"AUGMENTATION", ""}, {"QUESTION", "q?"}});
    EXPECT_NE(text.find("considering *only* the california_schools database"), std::string::npos);
    EXPECT_EQ(text.find("{DB_ID}"), std::string::npos);
}

TEST(Prompts, PlaceholderFreeTemplateIsVerbatim) {
    EXPECT_EQ(render_template_text("plain text, no slots", {}), "plain text, no slots");
    EXPECT_EQ(render_template_text("{{\"a\": 1}} {lower} { X }", {}), "{\"a\": 1} {lower} { X }");
}

TEST(Prompts, MissingBindingNamesThePlaceholder) {
    try {
        render_prompt(templates::sql_generation, {{"DB_ID", "x"}, {"AUGMENTATION", ""}});
        FAIL();
    } catch (const PromptError& e) {
        EXPECT_NE(std::string(e.what()).find("{QUESTION}"), std::string::npos);
    }
    EXPECT_THROW(render_prompt("no_such_template", {}), PromptError);
}

TEST(Prompts, BindingsAreNotEscapedOrReexpanded) {
    EXPECT_EQ(render_template_text("[{A}]", {{"A", "{B} {{x}}"}}), "[{B} {{x}}]");
}

TEST(Prompts, ColumnFilterPlaceholders) {
    EXPECT_EQ(placeholders(prompt_template(templates::column_filter)),
              (std::vector<std::string>{"TABLE_SCHEMA", "EXAMPLES", "QUESTION_AND_HINT"}));
    EXPECT_EQ(placeholders(prompt_template(templates::sql_generation)),
              (std::vector<std::string>{"DB_ID", "AUGMENTATION", "QUESTION"}));
    // Every shipped template renders once all of its placeholders are bound.
    for (const auto& id : template_ids()) {
        Bindings b;
        for (const auto& p : placeholders(prompt_template(id))) b[p] = "x";
        EXPECT_NO_THROW(render_prompt(id, b)) << id;
    }
}

TEST(ReplayStoreTest, RecordedOrderAndMiss) {
    auto store = std::make_shared<ReplayStore>();
    store->append(request("p"), "first");
    store->append(request("p"), "second");
    LlmGateway gw(fast_config(GatewayMode::replay), store, nullptr);
    EXPECT_EQ(gw.complete(request("p")).text, "first");
    EXPECT_EQ(gw.complete(request("p")).text, "second");
    try {
        gw.complete(request("p"));
        FAIL();
    } catch (const ReplayMiss& e) {
        EXPECT_NE(std::string(e.what()).find(replay_key("t", "p", 0.0).substr(0, 12)), std::string::npos);
    }
}

TEST(ReplayStoreTest, KeyDependsOnTemplatePromptAndTemperature) {
    const auto k = replay_key("t", "p", 0.7);
    EXPECT_NE(k, replay_key("u", "p", 0.7));
    EXPECT_NE(k, replay_key("t", "p2", 0.7));
    EXPECT_NE(k, replay_key("t", "p", 0.0));
    EXPECT_EQ(k, replay_key("t", "p", 0.7));
    EXPECT_EQ(k.size(), 64u);
}

TEST(ReplayStoreTest, PersistenceRoundTrip) {
    TempDir dir;
    auto store = std::make_shared<ReplayStore>();
    store->append(request("b"), "B");
    store->append(request("a"), "A1");
    store->append(request("a"), "A2");
    store->save(dir / "store.jsonl");
    const auto text = testing_support::read_text(dir / "store.jsonl");
    const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    EXPECT_TRUE(first.contains("key"));
    EXPECT_TRUE(first.contains("request_digest"));
    EXPECT_TRUE(first.contains("response_text"));
    auto loaded = ReplayStore::load(dir / "store.jsonl");
    EXPECT_EQ(loaded->size(), 3u);
    EXPECT_EQ(loaded->next(replay_key("t", "a", 0.0)), "A1");
    EXPECT_EQ(loaded->next(replay_key("t", "a", 0.0)), "A2");
    EXPECT_EQ(loaded->next(replay_key("t", "b", 0.0)), "B");
    loaded->save(dir / "again.jsonl");
    EXPECT_EQ(testing_support::read_text(dir / "again.jsonl"), text);
    EXPECT_EQ(ReplayStore::load(dir / "absent.jsonl")->size(), 0u);
}

TEST(Gateway, RecordModeCallsProviderOnMissOnly) {
    auto store = std::make_shared<ReplayStore>();
    store->append(request("known"), "cached");
    std::atomic<int> calls{0};
    auto provider = std::make_shared<FunctionProvider>([&](const LlmRequest& r) {
        ++calls;
        return LlmResponse{"fresh:" + r.rendered_prompt, FinishReason::complete, {}};
    });
    LlmGateway gw(fast_config(GatewayMode::record), store, provider);
    EXPECT_EQ(gw.complete(request("known")).text, "cached");
    EXPECT_EQ(gw.complete(request("new")).text, "fresh:new");
    EXPECT_EQ(calls.load(), 1);
    EXPECT_EQ(store->size(), 2u);

    store->rewind();
    LlmGateway replay(fast_config(GatewayMode::replay), store, nullptr);
    EXPECT_EQ(replay.complete(request("new")).text, "fresh:new");
}

TEST(Gateway, RetriesRetryableErrorsWithBackoff) {
    int attempts = 0;
    auto provider = std::make_shared<FunctionProvider>([&](const LlmRequest&) -> LlmResponse {
        if (++attempts < 3) throw ProviderError("busy", 503, true);
        return {"ok", FinishReason::complete, {}};
    });
    LlmGateway gw(fast_config(GatewayMode::live), nullptr, provider);
    EXPECT_EQ(gw.complete(request("x")).text, "ok");
    EXPECT_EQ(gw.retries(), 2u);
    EXPECT_EQ(gw.take_log().size(), 2u);
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
    int attempts = 0;
    auto provider = std::make_shared<FunctionProvider>([&](const LlmRequest&) -> LlmResponse {
        ++attempts;
        throw ProviderError("slow down", 429, true);
    });
    LlmGateway gw(fast_config(GatewayMode::live), nullptr, provider);
    EXPECT_THROW(gw.complete(request("x")), ProviderError);
    EXPECT_EQ(attempts, 3);
    int fatal = 0;
    auto bad = std::make_shared<FunctionProvider>([&](const LlmRequest&) -> LlmResponse {
        ++fatal;
        throw ProviderError("bad request", 400, false);
    });
    LlmGateway gw2(fast_config(GatewayMode::live), nullptr, bad);
    EXPECT_THROW(gw2.complete(request("x")), ProviderError);
    EXPECT_EQ(fatal, 1);
}

TEST(Gateway, BoundsConcurrentProviderCalls) {
    std::atomic<int> active{0};
    std::atomic<int> peak{0};
    auto provider = std::make_shared<FunctionProvider>([&](const LlmRequest& r) {
        const int now = ++active;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --active;
        return LlmResponse{r.rendered_prompt, FinishReason::complete, {}};
    });
    auto cfg = fast_config(GatewayMode::live);
    cfg.max_in_flight = 2;
    LlmGateway gw(cfg, nullptr, provider);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { gw.complete(request("p" + std::to_string(i))); });
    for (auto& t : threads) t.join();
    EXPECT_LE(peak.load(), 2);
    EXPECT_EQ(gw.provider_calls(), 8u);
}

TEST(Gateway, TokenBucketSpacesRequests) {
    auto provider = std::make_shared<FunctionProvider>(
        [](const LlmRequest&) { return LlmResponse{"ok", FinishReason::complete, {}}; });
    auto cfg = fast_config(GatewayMode::live);
    cfg.requests_per_second = 50;
    cfg.burst = 1;
    LlmGateway gw(cfg, nullptr, provider);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 6; ++i) gw.complete(request("x"));
    // Five refills at 20 ms each.
    EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(90));
}

TEST(Gateway, RejectsInvalidRequests) {
    LlmGateway gw(fast_config(GatewayMode::replay), std::make_shared<ReplayStore>(), nullptr);
    EXPECT_THROW(gw.complete(request("")), std::invalid_argument);
    EXPECT_THROW(gw.complete(request("x", 2.5)), std::invalid_argument);
    EXPECT_THROW(LlmGateway(fast_config(GatewayMode::replay), nullptr, nullptr), std::invalid_argument);
}

TEST(HttpProviderTest, StubServer429Then200) {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string seen_auth;
    nlohmann::json seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (++hits == 1) {
            res.status = 429;
            res.set_content("{}", "application/json");
            return;
        }
        seen_auth = req.get_header_value("Authorization");
        seen_body = nlohmann::json::parse(req.body);
        res.set_content(
            R"({"choices":[{"message":{"content":"<answer>SELECT 1</answer>"},"finish_reason":"stop"}],)"
            R"("usage":{"prompt_tokens":7,"completion_tokens":3}})",
            "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpProviderConfig pc;
    pc.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
    pc.api_key = "secret";
    pc.model = "stub-model";
    LlmGateway gw(fast_config(GatewayMode::live), nullptr, std::make_shared<HttpProvider>(pc));
    const auto r = gw.complete(request("hello", 0.7));
    server.stop();
    th.join();

    EXPECT_EQ(r.text, "<answer>SELECT 1</answer>");
    EXPECT_EQ(r.usage.prompt_tokens, 7);
    EXPECT_EQ(gw.retries(), 1u);
    EXPECT_EQ(hits.load(), 2);
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen_body.at("model"), "stub-model");
    EXPECT_EQ(seen_body.at("messages").at(0).at("content"), "hello");
}

TEST(ParseTagged, Basic) {
    const auto t = parse_tagged("<reasoning>r</reasoning><answer>SELECT 1</answer>");
    EXPECT_EQ(t.reasoning, "r");
    EXPECT_EQ(t.answer, "SELECT 1");
    EXPECT_FALSE(t.reasoning_missing);
}

TEST(ParseTagged, StripsFences) {
    const auto t = parse_tagged("<reasoning>x</reasoning>\n<answer>\n```sql\nSELECT a\nFROM t;\n```\n</answer>");
    EXPECT_EQ(t.answer, "SELECT a\nFROM t;");
}

TEST(ParseTagged, LenientAndStrictCases) {
    const auto t = parse_tagged("prose <answer>SELECT 2</answer> more");
    EXPECT_TRUE(t.reasoning_missing);
    EXPECT_EQ(t.reasoning, "");
    EXPECT_EQ(t.answer, "SELECT 2");
    EXPECT_THROW(parse_tagged("<reasoning>only</reasoning>"), ResponseFormatError);
    EXPECT_THROW(parse_tagged("<answer>unterminated"), ResponseFormatError);
    // The first well-formed pair wins.
    EXPECT_EQ(parse_tagged("<answer>a</answer><answer>b</answer>").answer, "a");
}

TEST(ParseTagged, RoundTripProperty) {
    std::mt19937_64 rng(3);
    const std::string alphabet = "abc XYZ;*()=\n'\"0123456789_,.";
    auto random_text = [&] {
        std::string s;
        const auto n = rng() % 40 + 1;
        for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
        return trim(s);
    };
    for (int i = 0; i < 500; ++i) {
        const auto r = random_text();
        auto a = random_text();
        if (a.empty()) a = "x";
        const auto parsed = parse_tagged(format_tagged(r, a));
        EXPECT_EQ(parsed.answer, a);
        EXPECT_EQ(parsed.reasoning, r);
    }
}

TEST(ParseJson, SelectedColumns) {
    const auto j = parse_json_object(R"({"reasoning":"...","selected_columns":["a","b"]})",
                                     {"reasoning", "selected_columns"}, {"selected_columns"});
    EXPECT_EQ(j.at("selected_columns").get<std::vector<std::string>>(), (std::vector<std::string>{"a", "b"}));
}

TEST(ParseJson, FencedWithProse) {
    const auto j = parse_json_object("Sure! {not json} here:\n```json\n{\"reasoning\": \"has } brace\", "
                                     "\"selected_columns\": []}\n```\nHope it helps {:",
                                     {"reasoning", "selected_columns"}, {"selected_columns"});
    EXPECT_TRUE(j.at("selected_columns").empty());
    EXPECT_EQ(j.at("reasoning"), "has } brace");
}

TEST(ParseJson, Errors) {
    EXPECT_THROW(parse_json_object("no object", {"a"}), ResponseFormatError);
    EXPECT_THROW(parse_json_object(R"({"reasoning":"x"})", {"reasoning", "selected_columns"}), ResponseFormatError);
    EXPECT_THROW(parse_json_object(R"({"reasoning":"x","selected_columns":"a"})", {"reasoning", "selected_columns"},
                                   {"selected_columns"}),
                 ResponseFormatError);
    EXPECT_THROW(parse_json_object(R"({"selected_columns":[1,2]})", {"selected_columns"}, {"selected_columns"}),
                 ResponseFormatError);
}

TEST(Temperatures, Defaults) {
    EXPECT_DOUBLE_EQ(default_temperature(Purpose::generate_sql), 0.7);
    EXPECT_DOUBLE_EQ(default_temperature(Purpose::sql_to_text), 0.7);
    EXPECT_DOUBLE_EQ(default_temperature(Purpose::judge), 0.0);
    EXPECT_DOUBLE_EQ(default_temperature(Purpose::column_filter), 0.0);
}
