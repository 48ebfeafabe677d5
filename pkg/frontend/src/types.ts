/** Wire types for the km4city HTTP facade, mirrored field by field. */

export type MetricName = "levenshtein" | "dice" | "jaccard" | "kb-levenshtein";

/** Every similarity metric, in the order the evidence bars render. */
export const METRIC_NAMES: readonly MetricName[] = [
  "levenshtein",
  "dice",
  "jaccard",
  "kb-levenshtein",
];

export type RunMethod = "exact" | MetricName;

export const RUN_METHODS: readonly RunMethod[] = [
  "exact",
  "levenshtein",
  "dice",
  "jaccard",
  "kb-levenshtein",
];

export type ReviewStateName = "pending" | "accepted" | "rejected" | "skipped";

export type LevelName = "number" | "street";

export interface MetricsBlock {
  precision: number;
  recall: number;
  f1: number;
  tp: number;
  fp: number;
  fn: number;
  noPredictions: number;
  byLevel?: Record<string, MetricsBlock>;
}

export interface MetricsResponse {
  goldSize: number;
  autoLinks: number;
  acceptedLinks: number;
  pending: number;
  skipped: number;
  rejected: number;
  beforeManual: MetricsBlock | null;
  current: MetricsBlock | null;
}

export interface Candidate {
  road: string;
  officialName: string;
  alternativeName: string | null;
  municipality: string;
  streetNumber: string | null;
  civic: string | null;
  level: LevelName;
  method: string;
  score: number;
  similarity: Partial<Record<MetricName, number>>;
}

export interface ServiceAddress {
  street: string;
  civic: string;
  municipality: string;
}

export interface ReviewItem {
  id: string;
  service: string;
  serviceAddress: ServiceAddress | null;
  municipality: string;
  runMethod: string;
  state: ReviewStateName;
  topScore: number;
  decidedBy: string | null;
  decidedAt: string | null;
  candidates: Candidate[];
}

export interface ReviewPage {
  items: ReviewItem[];
  total: number;
  nextCursor: string | null;
  pending: number;
  liveMetrics: MetricsBlock | null;
}

export interface ReviewQuery {
  status?: "open" | "all" | ReviewStateName;
  method?: string;
  municipality?: string;
  scoreBand?: string;
  cursor?: string;
  limit?: number;
}

export type DecisionAction = "accept" | "reject" | "skip";

export interface DecisionRequest {
  action: DecisionAction;
  candidateIndex?: number;
  operator?: string;
}

export interface DecisionResponse {
  item: ReviewItem;
  quadsAdded: number;
  pending: number;
  liveMetrics: MetricsBlock | null;
}

export interface RunRequest {
  method: RunMethod;
  streetEditMax?: number;
  acceptThreshold?: number;
  reviewThreshold?: number;
  locationWeight?: number;
  streetWeight?: number;
}

export interface RunSummary {
  method: string;
  total: number;
  autoAccepted: number;
  review: number;
  noMatch: number;
  numberLevel: number;
  streetLevel: number;
  unresolvedWithCoordinates: number;
  queued: number;
  conflicts: number;
  quadsAdded: number;
  liveMetrics: MetricsBlock | null;
}

export interface HealthResponse {
  status: string;
  quads: number;
  contexts: number;
  reviewOpen: number;
}

export interface DatasetView {
  id: string;
  status: string;
  context: string;
  processType: string;
  macroclass: string;
  stagedRows: number;
  quadCount: number;
}

export interface QuadObject {
  kind: "iri" | "literal";
  value: string;
  datatype?: string;
}

export interface QuadRow {
  subject: string;
  predicate: string;
  object: QuadObject;
  context: string;
}

export interface QuadsPage {
  quads: QuadRow[];
  total: number;
  nextCursor: string | null;
}

export interface QuadsQuery {
  s?: string;
  p?: string;
  o?: string;
  olit?: string;
  c?: string;
  closure?: boolean;
  cursor?: string;
  limit?: number;
}

export interface GeoHit {
  iri: string;
  distance: number;
  lat: number;
  long: number;
  class: string | null;
  classes: string[];
  name: string | null;
}

export interface GeoQuery {
  lat: number;
  long: number;
  k?: number;
  maxDistance?: number;
  classFilter?: string;
}
