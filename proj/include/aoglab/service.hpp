#pragma once

#include "aoglab/interaction.hpp"
#include "aoglab/serialization.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace aoglab {

inline constexpr int kSchemaVersion = 1;

/// Transport-neutral request; `path` excludes the query string.
struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status{200};
  std::string content_type{"application/json"};
  std::string body;
  std::map<std::string, std::string> headers;

  Json json() const { return Json::parse(body); }
};

struct ServiceOptions {
  std::filesystem::path data_root;
  std::string cors_origin{"*"};
  /// Called while a session's writer lock is held, before the mutation runs.
  std::function<void(const std::string& session_id)> on_write_locked;
};

/// The /v1 HTTP+JSON API. Datasets are subdirectories of the data root holding a manifest.json;
/// sessions are persisted under <data_root>/sessions and resumed on first use.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& request);

  const ServiceOptions& options() const { return options_; }

 private:
  struct Slot;
  class WriteLock;

  std::shared_ptr<const Dataset> dataset(const std::string& id);
  std::shared_ptr<Slot> slot(const std::string& session_id);
  InteractionSession snapshot(Slot& s);
  void commit(Slot& s, InteractionSession next);
  ParseTree cached_parse(const InteractionSession& s, const std::string& image_id);

  Json list_datasets();
  Json list_images(const std::string& dataset_id);
  Json create_session(const Json& body);
  Json describe(const InteractionSession& s);
  Json parse(const std::string& session_id, const Json& body);
  Response overlay(const std::string& session_id, const std::string& image_id, const std::map<std::string, std::string>& query);
  Json annotate(const std::string& session_id, const Json& body);
  Json prune(const std::string& session_id, const Json& body);
  Json undo(const std::string& session_id, const Json& body);
  Json metrics(const std::string& session_id);

  ServiceOptions options_;
  std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex cache_mutex_;
  std::map<std::string, ParseTree> parse_cache_;
  std::map<std::string, Json> metrics_cache_;
};

/// HTTP front end for a Service (cpp-httplib). Every request is forwarded to Service::handle.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aoglab
