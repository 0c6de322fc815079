"""coxfield - Robot Framework keyword library for conditional LGCP models.

Fit, simulate and check hierarchical log Gaussian Cox process models of a
child pattern driven by the influence of a parent pattern.
"""
from __future__ import annotations

from robot.api.deco import library

from .keywords.envelope_keywords import EnvelopeKeywords
from .keywords.field_keywords import FieldKeywords
from .keywords.model_keywords import ModelKeywords
from .keywords.output_keywords import OutputKeywords
from .keywords.params import ParamsKeywords


@library(scope="GLOBAL")
class CoxFieldLibrary(
    ParamsKeywords,
    ModelKeywords,
    EnvelopeKeywords,
    FieldKeywords,
    OutputKeywords,
):
    """Robot Framework library for conditional log Gaussian Cox process models.

    = Overview =

    ``CoxFieldLibrary`` drives the same computations as the ``coxfield``
    command line tool (``simulate``, ``fit``, ``envelope``, ``edgefield``)
    from Robot test cases. All keywords share one session: a loaded run
    configuration, the plots added to it and the results computed so far.

    = Drei-Phasen-Modell =

    | *Phase*      | *Keywords*                                                  | *Aufgabe*                          |
    | Vorbereiten  | ``LoadRunConfig``, ``SetCoxfieldParameter``, ``LoadPlot``, ``SimulatePlot`` | Konfiguration und Plots laden |
    | Ausfuehren   | ``FitModel``, ``BuildEnvelopes``, ``ComputeEdgeField``, ``WriteOutputs``    | Modell anpassen, pruefen, exportieren |
    | Pruefen      | ``VerifyAcceptanceRate``, ``VerifyPosteriorMean``, ``VerifyEnvelopePasses``, ``VerifyExteriorFieldMaximalAtCorners``, ``VerifyKernelValue``, ``VerifyOutputWritten`` | Ergebnisse verifizieren |

    Beispiel - Anpassung und Modellpruefung an einem simulierten Plot:

    | # Vorbereiten
    | LoadRunConfig           smoke
    | SetCoxfieldParameter    NIter     2000
    | SetCoxfieldParameter    BurnIn    500
    | SimulatePlot            A    poisson    estimated
    | # Ausfuehren
    | FitModel
    | BuildEnvelopes          L    G
    | # Pruefen
    | VerifyAcceptanceRate    0.05    0.6
    | VerifyPosteriorMean     beta1    TRUTH    1.0
    | VerifyEnvelopePasses    A    L    ${IGNORE}

    = Konfiguration =

    ``LoadRunConfig`` nimmt einen Pfad, einen Namen unter ``./configs/`` oder
    ein mitgeliefertes Preset (``smoke``, ``fit``, ``envelope``, ``edgefield``,
    ``experiment``, ``desk_study``). ``SetCoxfieldParameter`` ueberschreibt
    einzelne Werte fuer die laufende Sitzung:

    | *Name*     | *Wirkung*                         |
    | Seed       | Basis-Seed aller Zufallsstroeme   |
    | Out        | Ausgabeverzeichnis                |
    | NIter      | Iterationen je Kette              |
    | BurnIn     | verworfene Anfangsiterationen     |
    | Thin       | Ausduennung                       |
    | NChains    | Anzahl Ketten                     |
    | NSims      | Simulationen je Envelope          |

    = OKW Tokens =

    | *Token*     | *Verhalten*                                          |
    | ``$IGNORE`` | Verify-Keyword wird uebersprungen (PASS).            |
    | ``YES/NO``  | Erwartung fuer Ja/Nein-Pruefungen (Envelope, Ecken). |

    In Robot-Syntax: ``${IGNORE}`` expandiert zu ``$IGNORE``.

    = Import =

    | Library    coxfield.library.CoxFieldLibrary

    = Abhaengigkeiten =

    - ``robotframework >= 6.0``
    - ``PyYAML >= 6.0``
    - ``okw-contract-utils >= 0.2.0``
    - ``numpy``, ``scipy``, ``joblib``
    """

    ROBOT_LIBRARY_DOC_FORMAT = 'ROBOT'
    ROBOT_LIBRARY_VERSION = '0.1.0'

    def __init__(self):
        """Initialisiert die CoxFieldLibrary mit leerer Sitzung.

        ``LoadRunConfig`` muss vor allen anderen Keywords aufgerufen werden.
        """
        # Keyword-Mixins sind zustandslos; die Sitzung liegt im globalen Context.
        super().__init__()
