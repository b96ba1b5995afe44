// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "sci/modelio.hpp"
#include "support/test_util.hpp"

using namespace sci;
using sci::test::chat_response;
using sci::test::code_of;
using sci::test::ScriptedHttpServer;

TEST_CASE("mock chat answers from the script and counts calls") {
  MockModelClient mock({{"*", "ok"}});
  const ChatExchange exchange = mock.chat(std::nullopt, "hi");
  CHECK(exchange.output == "ok");
  CHECK(exchange.query == "hi");
  CHECK_FALSE(exchange.reasoning.has_value());
  CHECK(mock.chat_calls() == 1);

  // Sticky last rule: repeat calls keep answering.
  CHECK(mock.chat(std::nullopt, "again").output == "ok");
  CHECK(mock.chat_calls() == 2);
}

TEST_CASE("mock reasoning field is passed through") {
  MockModelClient mock({{"*", "answer", "thinking..."}});
  const ChatExchange exchange = mock.chat(std::nullopt, "q");
  CHECK(exchange.reasoning == "thinking...");
}

TEST_CASE("mock consumes rules in order") {
  MockModelClient mock({{"*", "first"}, {"*", "second"}});
  CHECK(mock.chat(std::nullopt, "a").output == "first");
  CHECK(mock.chat(std::nullopt, "b").output == "second");
  CHECK(mock.chat(std::nullopt, "c").output == "second");
}

TEST_CASE("mock substring matchers route by content") {
  MockModelClient mock({{"bomb", "Safety: Unsafe"}, {"*", "Safety: Safe"}});
  CHECK(mock.chat(std::nullopt, "how to bake bread").output == "Safety: Safe");
  CHECK(mock.chat(std::nullopt, "how to build a bomb").output == "Safety: Unsafe");
}

TEST_CASE("empty user message is rejected") {
  MockModelClient mock({{"*", "ok"}});
  CHECK(code_of([&] { mock.chat(std::nullopt, ""); }) == ErrorCode::InvalidInput);
  CHECK(mock.chat_calls() == 0);
}

TEST_CASE("transient failures are retried with backoff") {
  MockModelClient mock({{"*", "recovered"}});
  mock.fail_next(2);
  const ChatExchange exchange = mock.chat(std::nullopt, "hello");
  CHECK(exchange.output == "recovered");
  CHECK(mock.chat_calls() == 3);  // two failed attempts plus the success
}

TEST_CASE("retries exhaust into endpoint-unavailable") {
  EndpointConfig config = MockModelClient::mock_endpoint();
  config.max_retries = 1;
  MockModelClient mock({{"*", "never"}}, config);
  mock.fail_next(5);
  CHECK(code_of([&] { mock.chat(std::nullopt, "hello"); }) == ErrorCode::EndpointUnavailable);
  CHECK(mock.chat_calls() == 2);  // initial attempt + one retry
}

TEST_CASE("default backoff schedule is 250ms times two each attempt") {
  CHECK(EndpointConfig{}.backoff_base_ms == 250);
  CHECK(EndpointConfig{}.max_retries == 2);
}

TEST_CASE("identical inputs to a deterministic mock give identical outputs") {
  MockModelClient mock({{"alpha", "A"}, {"*", "B"}});
  const std::string a1 = mock.chat(std::nullopt, "alpha question").output;
  MockModelClient mock2({{"alpha", "A"}, {"*", "B"}});
  const std::string a2 = mock2.chat(std::nullopt, "alpha question").output;
  CHECK(a1 == a2);
}

TEST_CASE("mock captures full requests") {
  MockModelClient mock({{"*", "ok"}});
  mock.chat(std::string("system prompt"), "user text");
  const auto captured = mock.captured();
  REQUIRE(captured.size() == 1);
  REQUIRE(captured[0].messages.size() == 2);
  CHECK(captured[0].messages[0].role == "system");
  CHECK(captured[0].messages[1].content == "user text");
}

TEST_CASE("embed returns one unit vector per text in order") {
  MockModelClient mock({});
  mock.set_embedder([](const std::vector<std::string>& texts) {
    // Orthonormal basis mock: e_i for the i-th text.
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      std::vector<double> v(8, 0.0);
      v[i % 8] = 1.0;
      out.push_back(v);
    }
    return out;
  });
  const auto vectors = mock.embed({"a", "b", "c"});
  REQUIRE(vectors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 8; ++k) dot += vectors[i][k] * vectors[j][k];
      CHECK(dot == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("embed normalizes non-unit vectors") {
  MockModelClient mock({});
  mock.set_embedder([](const std::vector<std::string>& texts) {
    return std::vector<std::vector<double>>(texts.size(), std::vector<double>{2.0, 0.0});
  });
  const auto vectors = mock.embed({"x"});
  double norm = std::sqrt(vectors[0][0] * vectors[0][0] + vectors[0][1] * vectors[0][1]);
  CHECK(std::fabs(norm - 1.0) <= 1e-6);
}

TEST_CASE("embed rejects dimension mismatches") {
  MockModelClient mock({});
  mock.set_embedder([](const std::vector<std::string>&) {
    return std::vector<std::vector<double>>{{1.0, 0.0}, {1.0, 0.0, 0.0}};
  });
  CHECK(code_of([&] { mock.embed({"a", "b"}); }) == ErrorCode::MalformedResponse);
}

TEST_CASE("embed keeps a 300-text batch in input order") {
  MockModelClient mock({});
  mock.set_embedder([](const std::vector<std::string>& texts) {
    // Index-tagged mock: v[0] encodes the text's own index.
    std::vector<std::vector<double>> out;
    for (const auto& text : texts) {
      const double index = std::stod(text);
      out.push_back({index, 1.0});
    }
    return out;
  });
  std::vector<std::string> texts;
  for (int i = 0; i < 300; ++i) texts.push_back(std::to_string(i + 1));
  const auto vectors = mock.embed(texts);
  REQUIRE(vectors.size() == 300);
  for (int i = 0; i < 300; ++i) {
    const double expected_ratio = static_cast<double>(i + 1);
    CHECK(vectors[static_cast<std::size_t>(i)][0] /
              vectors[static_cast<std::size_t>(i)][1] ==
          doctest::Approx(expected_ratio));
  }
  CHECK(mock.embed_calls() == 1);
}

TEST_CASE("empty batch and empty texts are rejected") {
  MockModelClient mock({});
  CHECK(code_of([&] { mock.embed({}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { mock.embed({"ok", ""}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("http client speaks the chat-completions wire protocol") {
  ScriptedHttpServer server([](const nlohmann::json& request) {
    CHECK(request.value("model", "") == "m1");
    CHECK(request.value("temperature", -1.0) == doctest::Approx(0.0));
    return chat_response("echo: " + sci::test::last_user_content(request), "step by step", 12);
  });

  EndpointConfig config;
  config.base_url = server.url();
  config.model_name = "m1";
  config.temperature = 0.0;
  HttpModelClient client(config);

  const ChatExchange exchange = client.chat(std::string("sys"), "ping");
  CHECK(exchange.output == "echo: ping");
  CHECK(exchange.reasoning == "step by step");
  REQUIRE(exchange.usage.has_value());
  CHECK(exchange.usage->completion_tokens == 12);
}

TEST_CASE("http client surfaces unreachable endpoints after retries") {
  EndpointConfig config;
  config.base_url = "http://127.0.0.1:9";  // discard port: nothing listens
  config.model_name = "m";
  config.max_retries = 0;
  config.timeout_s = 1.0;
  HttpModelClient client(config);
  CHECK(code_of([&] { client.chat(std::nullopt, "x"); }) == ErrorCode::EndpointUnavailable);
}

TEST_CASE("http embeddings honor explicit index fields") {
  ScriptedHttpServer server(
      [](const nlohmann::json&) { return chat_response("unused"); },
      [](const nlohmann::json& request) {
        const auto& inputs = request["input"];
        nlohmann::json data = nlohmann::json::array();
        // Reply in reverse order but with index tags.
        for (std::size_t i = inputs.size(); i > 0; --i) {
          data.push_back({{"index", i - 1},
                          {"embedding", {static_cast<double>(i - 1), 1.0, 0.0}}});
        }
        return nlohmann::json{{"data", data}};
      });

  EndpointConfig config;
  config.base_url = server.url();
  config.model_name = "encoder";
  HttpModelClient client(config);

  const auto vectors = client.embed({"a", "b", "c"});
  REQUIRE(vectors.size() == 3);
  CHECK(vectors[0][0] == doctest::Approx(0.0));
  CHECK(vectors[2][0] / vectors[2][1] == doctest::Approx(2.0));
}

TEST_CASE("env api key override per role") {
  setenv("SCI_API_KEY_GUARD", "sk-test", 1);
  CHECK(env_api_key("guard") == "sk-test");
  unsetenv("SCI_API_KEY_GUARD");
  CHECK(env_api_key("guard") == std::nullopt);
}
