#include "aoglab/service.hpp"

#include "aoglab/error.hpp"
#include "aoglab/eval.hpp"
#include "aoglab/parser.hpp"
#include "aoglab/viz.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>

namespace aoglab {

namespace {

class ConflictError : public Error {
 public:
  using Error::Error;
};

class BadRequestError : public Error {
 public:
  using Error::Error;
};

bool safe_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end + 1;
  }
  return parts;
}

Json body_json(const Request& r) {
  if (r.body.empty()) return Json::object();
  try {
    Json j = Json::parse(r.body);
    if (!j.is_object()) throw BadRequestError("request body must be a JSON object");
    return j;
  } catch (const Json::parse_error& e) {
    throw BadRequestError(std::string("malformed JSON body: ") + e.what());
  }
}

Response json_response(int status, Json payload) {
  payload["schema_version"] = kSchemaVersion;
  return {status, "application/json", payload.dump(), {}};
}

Response error_response(int status, const std::string& message, const std::string& field = {}) {
  Json err = {{"status", status}, {"message", message}};
  if (!field.empty()) err["field"] = field;
  return json_response(status, {{"error", err}});
}

}  // namespace

struct Service::Slot {
  std::mutex write;
  std::mutex state;
  InteractionSession session;
  std::string aog_ref;
};

class Service::WriteLock {
 public:
  explicit WriteLock(Slot& s) : lock_(s.write, std::try_to_lock) {
    if (!lock_.owns_lock()) throw ConflictError("session '" + s.session.session_id + "' has a mutation in progress");
  }

 private:
  std::unique_lock<std::mutex> lock_;
};

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  if (options_.data_root.empty()) throw ValidationError("data_root", "must be set");
}

Service::~Service() = default;

std::shared_ptr<const Dataset> Service::dataset(const std::string& id) {
  if (!safe_id(id)) throw NotFoundError("unknown dataset '" + id + "'");
  std::lock_guard lock(registry_mutex_);
  if (auto it = datasets_.find(id); it != datasets_.end()) return it->second;
  const auto manifest = options_.data_root / id / "manifest.json";
  if (!std::filesystem::exists(manifest)) throw NotFoundError("unknown dataset '" + id + "'");
  auto ds = load_dataset(manifest);
  datasets_[id] = ds;
  return ds;
}

std::shared_ptr<Service::Slot> Service::slot(const std::string& session_id) {
  if (!safe_id(session_id)) throw NotFoundError("unknown session '" + session_id + "'");
  {
    std::lock_guard lock(registry_mutex_);
    if (auto it = sessions_.find(session_id); it != sessions_.end()) return it->second;
  }
  const auto file = options_.data_root / "sessions" / (session_id + ".json");
  if (!std::filesystem::exists(file)) throw NotFoundError("unknown session '" + session_id + "'");
  Json j;
  try {
    j = Json::parse(read_text_file(file));
  } catch (const Json::parse_error& e) {
    throw FormatError("session file '" + file.string() + "': " + e.what());
  }
  const Json& state = j.at("session");
  auto s = std::make_shared<Slot>();
  s->session = session_from_json(state, dataset(required<std::string>(state, "manifest", "session")));
  s->aog_ref = j.value("aog_ref", "");
  std::lock_guard lock(registry_mutex_);
  return sessions_.try_emplace(session_id, s).first->second;
}

InteractionSession Service::snapshot(Slot& s) {
  std::lock_guard lock(s.state);
  return s.session;
}

void Service::commit(Slot& s, InteractionSession next) {
  const Json persisted = {{"service_version", 1}, {"aog_ref", s.aog_ref}, {"session", to_json(next)}};
  const auto dir = options_.data_root / "sessions";
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (next.session_id + ".json.tmp");
  write_text_file(tmp, persisted.dump(2) + "\n");
  std::filesystem::rename(tmp, dir / (next.session_id + ".json"));
  std::lock_guard lock(s.state);
  s.session = std::move(next);
}

ParseTree Service::cached_parse(const InteractionSession& s, const std::string& image_id) {
  const ImageRecord& rec = s.dataset->manifest.record(image_id);
  const std::string key = s.session_id + "|" + image_id + "|" + aog_hash(s.current);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = parse_cache_.find(key); it != parse_cache_.end()) return it->second;
  }
  ParseTree tree = aoglab::parse(s.dataset->features_for(image_id), s.current, ImageFrame::from(rec));
  std::lock_guard lock(cache_mutex_);
  return parse_cache_.try_emplace(key, std::move(tree)).first->second;
}

Json Service::list_datasets() {
  Json out = Json::array();
  std::vector<std::string> ids;
  if (std::filesystem::is_directory(options_.data_root))
    for (const auto& e : std::filesystem::directory_iterator(options_.data_root))
      if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    const DatasetManifest m = load_manifest(options_.data_root / id / "manifest.json");
    out.push_back({{"dataset_id", id}, {"category", m.category}, {"part", m.part}, {"n_images", m.records.size()}});
  }
  return {{"datasets", out}};
}

Json Service::list_images(const std::string& dataset_id) {
  const auto ds = dataset(dataset_id);
  Json images = Json::array();
  for (const auto& r : ds->manifest.records) images.push_back(to_json(r));
  return {{"dataset_id", dataset_id}, {"images", images}};
}

Json Service::create_session(const Json& body) {
  const std::string dataset_id = required<std::string>(body, "manifest", "");
  const auto ds = dataset(dataset_id);
  if (!body.contains("aog")) throw ValidationError("aog", "required");
  const Json& aog_j = body.at("aog");
  SemanticPartAOG aog;
  std::string aog_ref;
  if (aog_j.is_string()) {
    aog_ref = aog_j.get<std::string>();
    const std::filesystem::path rel(aog_ref);
    if (rel.is_absolute() || std::any_of(rel.begin(), rel.end(), [](const auto& p) { return p == ".."; }))
      throw ValidationError("aog", "path must be relative to the dataset directory");
    const auto file = options_.data_root / dataset_id / rel;
    if (!std::filesystem::exists(file)) throw NotFoundError("unknown AOG file '" + aog_ref + "'");
    aog = load_aog(file);
  } else if (aog_j.is_object()) {
    aog = aog_from_json(aog_j);
    aog_ref = "inline:" + aog_hash(aog);
  } else {
    throw ValidationError("aog", "must be an AOG object or a path");
  }
  aog.validate_against(ds->manifest.layer_geometries);

  auto s = std::make_shared<Slot>();
  s->aog_ref = aog_ref;
  std::string id;
  {
    std::lock_guard lock(registry_mutex_);
    for (int n = int(sessions_.size()) + 1;; ++n) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%06d", n);
      id = buf;
      if (!sessions_.count(id) && !std::filesystem::exists(options_.data_root / "sessions" / (id + ".json"))) break;
    }
    s->session = InteractionSession::open(id, ds, std::move(aog), dataset_id);
    sessions_[id] = s;
  }
  WriteLock lock(*s);
  commit(*s, snapshot(*s));
  return describe(snapshot(*s));
}

Json Service::describe(const InteractionSession& s) {
  const ParseTree* active = nullptr;
  if (s.active_image)
    if (auto it = s.trees.find(*s.active_image); it != s.trees.end()) active = &it->second;
  Json patterns = Json::array();
  for (const auto& t : s.current.templates)
    for (const auto& p : t.patterns) {
      Json contribution = nullptr;
      if (active)
        for (const auto& a : active->assignments)
          if (a.pattern_id == p.pattern_id) contribution = a.contribution;
      patterns.push_back({{"pattern_id", p.pattern_id},
                          {"template_id", t.template_id},
                          {"layer_id", p.layer_id},
                          {"group", to_string(s.dataset->manifest.layer_groups.group_of(p.layer_id))},
                          {"active", p.active},
                          {"contribution", contribution}});
    }
  Json working = Json::array();
  for (const auto& [id, tree] : s.trees) working.push_back(id);
  std::string aog_ref;
  {
    std::lock_guard lock(registry_mutex_);
    if (auto it = sessions_.find(s.session_id); it != sessions_.end()) aog_ref = it->second->aog_ref;
  }
  return {{"session",
           {{"session_id", s.session_id},
            {"manifest", s.manifest_ref},
            {"aog_ref", aog_ref},
            {"aog_hash", aog_hash(s.current)},
            {"active_image", s.active_image ? Json(*s.active_image) : Json(nullptr)},
            {"stack_depth", s.stack.size()},
            {"working_images", working},
            {"patterns", patterns}}}};
}

Json Service::parse(const std::string& session_id, const Json& body) {
  auto s = slot(session_id);
  WriteLock lock(*s);
  if (options_.on_write_locked) options_.on_write_locked(session_id);
  InteractionSession next = snapshot(*s);
  const std::string image_id = required<std::string>(body, "image_id", "");
  ParseTree tree = cached_parse(next, image_id);
  next.trees[image_id] = tree;
  next.active_image = image_id;
  commit(*s, std::move(next));
  return {{"parse_tree", to_json(tree)}};
}

Response Service::overlay(const std::string& session_id, const std::string& image_id, const std::map<std::string, std::string>& query) {
  const InteractionSession s = snapshot(*slot(session_id));
  const ImageRecord& rec = s.dataset->manifest.record(image_id);
  const auto it = s.trees.find(image_id);
  const ParseTree tree = it != s.trees.end() ? it->second : cached_parse(s, image_id);
  const FeatureMapSet& fm = s.dataset->features_for(image_id);
  const LayerGroups& groups = s.dataset->manifest.layer_groups;

  std::optional<LayerGroup> group;
  if (auto g = query.find("group"); g != query.end() && g->second != "all") {
    try {
      group = parse_layer_group(g->second);
    } catch (const ValidationError&) {
      throw ValidationError("group", "must be low, mid, high or all");
    }
  }
  std::vector<PatternHeatmap> heatmaps;
  if (group) {
    heatmaps = group_heatmaps(fm, s.current, tree, groups, *group, rec.width_px, rec.height_px).patterns;
  } else {
    for (const auto& a : tree.assignments)
      heatmaps.push_back({a.pattern_id, pattern_heatmap(fm, s.current.pattern(a.pattern_id), tree, rec.width_px, rec.height_px)});
  }
  const Overlay ov = render_overlay(image_id, heatmaps, tree, s.current, groups, rec.width_px, rec.height_px, group);
  if (auto f = query.find("format"); f != query.end() && f->second == "png") return {200, "image/png", ov.png, {}};
  return json_response(200, {{"layout", ov.layout}, {"png_base64", httplib::detail::base64_encode(ov.png)}});
}

Json Service::annotate(const std::string& session_id, const Json& body) {
  InteractionSession s = snapshot(*slot(session_id));
  const AnnotatedRegionSet regions = annotated_regions_from_json(body);
  if (!s.trees.count(regions.image_id)) s.trees[regions.image_id] = cached_parse(s, regions.image_id);
  return {{"proposal", to_json(propose_prunes(s, regions, manifest_saliency(s.dataset)))}};
}

Json Service::prune(const std::string& session_id, const Json& body) {
  auto s = slot(session_id);
  WriteLock lock(*s);
  if (options_.on_write_locked) options_.on_write_locked(session_id);
  const auto ids = required<std::vector<std::string>>(body, "pattern_ids", "");
  std::optional<AnnotatedRegionSet> annotation;
  if (body.contains("annotation") && !body.at("annotation").is_null()) annotation = annotated_regions_from_json(body.at("annotation"));
  const auto ts = body.contains("timestamp_ms") ? required<std::int64_t>(body, "timestamp_ms", "") : std::int64_t{0};
  InteractionSession next = apply_prunes(snapshot(*s), ids, std::move(annotation), ts);
  Json out = describe(next);
  commit(*s, std::move(next));
  return out;
}

Json Service::undo(const std::string& session_id, const Json& body) {
  auto s = slot(session_id);
  WriteLock lock(*s);
  if (options_.on_write_locked) options_.on_write_locked(session_id);
  const int k = body.contains("k") ? required<int>(body, "k", "") : 1;
  if (k < 0) throw ValidationError("k", "must be >= 0");
  InteractionSession next = aoglab::undo(snapshot(*s), std::size_t(k));
  Json out = describe(next);
  commit(*s, std::move(next));
  return out;
}

Json Service::metrics(const std::string& session_id) {
  const InteractionSession s = snapshot(*slot(session_id));
  const std::string key = s.manifest_ref + "|" + aog_hash(s.current);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = metrics_cache_.find(key); it != metrics_cache_.end()) return it->second;
  }
  Json out = {{"report", to_json(evaluate(s.current, *s.dataset, "test"))}};
  std::lock_guard lock(cache_mutex_);
  return metrics_cache_.try_emplace(key, std::move(out)).first->second;
}

Response Service::handle(const Request& request) {
  Response res;
  try {
    const auto p = split_path(request.path);
    const std::string& m = request.method;
    const auto n = p.size();
    if (m == "OPTIONS") {
      res = {204, "text/plain", "", {}};
    } else if (n < 2 || p[0] != "v1") {
      res = error_response(404, "no route for " + m + " " + request.path);
    } else if (p[1] == "datasets" && n == 2 && m == "GET") {
      res = json_response(200, list_datasets());
    } else if (p[1] == "datasets" && n == 4 && p[3] == "images" && m == "GET") {
      res = json_response(200, list_images(p[2]));
    } else if (p[1] == "sessions" && n == 2 && m == "POST") {
      res = json_response(201, create_session(body_json(request)));
    } else if (p[1] == "sessions" && n == 3 && m == "GET") {
      res = json_response(200, describe(snapshot(*slot(p[2]))));
    } else if (p[1] == "sessions" && n == 4 && m == "POST" && p[3] == "parse") {
      res = json_response(200, parse(p[2], body_json(request)));
    } else if (p[1] == "sessions" && n == 5 && m == "GET" && p[3] == "overlay") {
      res = overlay(p[2], p[4], request.query);
    } else if (p[1] == "sessions" && n == 4 && m == "POST" && p[3] == "annotate") {
      res = json_response(200, annotate(p[2], body_json(request)));
    } else if (p[1] == "sessions" && n == 4 && m == "POST" && p[3] == "prune") {
      res = json_response(200, prune(p[2], body_json(request)));
    } else if (p[1] == "sessions" && n == 4 && m == "POST" && p[3] == "undo") {
      res = json_response(200, undo(p[2], body_json(request)));
    } else if (p[1] == "sessions" && n == 4 && m == "GET" && p[3] == "metrics") {
      res = json_response(200, metrics(p[2]));
    } else {
      res = error_response(404, "no route for " + m + " " + request.path);
    }
  } catch (const NotFoundError& e) {
    res = error_response(404, e.what());
  } catch (const ConflictError& e) {
    res = error_response(409, e.what());
  } catch (const BadRequestError& e) {
    res = error_response(400, e.what());
  } catch (const ValidationError& e) {
    res = error_response(422, e.what(), e.field().empty() ? "body" : e.field());
  } catch (const EmptyAogError& e) {
    res = error_response(422, e.what(), "aog");
  } catch (const Json::exception& e) {
    res = error_response(422, e.what(), "body");
  } catch (const Error& e) {
    res = error_response(500, e.what());
  }
  res.headers["Access-Control-Allow-Origin"] = options_.cors_origin;
  res.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  res.headers["Access-Control-Allow-Headers"] = "Content-Type";
  return res;
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    Request r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const Response out = impl_->service.handle(r);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    res.set_content(out.body, out.content_type);
  };
  impl_->server.Get(".*", forward);
  impl_->server.Post(".*", forward);
  impl_->server.Options(".*", forward);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace aoglab
