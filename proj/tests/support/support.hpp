#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gradepipe/corpus.hpp"
#include "gradepipe/llm_gateway.hpp"

namespace gradepipe::testing {

std::filesystem::path fixture_dir();
std::filesystem::path source_dir();

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Hands out canned replies in order and remembers every request.
class ScriptedClient final : public CompletionClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies = {}) : replies_(replies.begin(), replies.end()) {}
  void push(std::string reply) { replies_.push_back(std::move(reply)); }
  // Reply used once the queue is empty; without it an empty queue throws TransportFailure.
  void set_default(std::string reply) { default_ = std::move(reply); }
  ModelResponse complete(const PromptRequest& request) override;
  std::vector<PromptRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::deque<std::string> replies_;
  std::optional<std::string> default_;
  std::vector<PromptRequest> requests_;
};

// Deterministic stand-in for a grading model. It recognises fixture submissions in the prompt and
// grades them from their recorded mutations, with a few planted quirks (one unusable first reply,
// one reverse grade whose claimed total disagrees with its own deductions).
class HeuristicEndpoint final : public Endpoint {
 public:
  explicit HeuristicEndpoint(Corpus corpus) : corpus_(std::move(corpus)) {}
  std::string send(const PromptRequest& request) override;

 private:
  Corpus corpus_;
};

// Submission source as it appears between the fences of a grading prompt.
std::string embedded_source(std::string_view prompt);

}  // namespace gradepipe::testing
