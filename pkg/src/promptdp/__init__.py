"""Character-level local differential privacy for LLM prompts."""

__version__ = "0.1.0"

from .errors import (AlphabetError, CorpusError, ParameterError, PromptDPError, ProtocolError,
                     RestorerConfigurationError, TransportError)
from .evaluation import (EvaluationReport, Rate, TokenAlignment, UnigramEmbedder, RemoteEmbedder, align_tokens,
                         entity_reconstruction, evaluate, reconstruction_rates, reports_to_csv,
                         semantic_similarity, sweep, token_reconstructed)
from .mechanism import (PerturbationParams, PerturbedDocument, gamma_from_epsilon, perturb_char, perturb_document,
                        perturb_word, verify_dp_ratio)
from .restoration import (MockRestorer, RestorationResult, RestorerConfig, build_restoration_prompt,
                          mock_dictionary_restore, restore, restore_corpus)
from .text import (DEFAULT_ALPHABET, AnnotatedDocument, CharAlphabet, EntityAnnotation, Token, detokenize,
                   load_corpus, split_layout, tokenize, word_length_histogram)
from .theory import (BaselineCurve, CharPrior, baseline_T_alpha, baseline_curve, brute_force_channel,
                     cum_hamming_prob, log_likelihood_ratio, posterior_char, random_word_exact_prob)
