from pathlib import Path

from robot.api.deco import keyword

from ..commands import OutputCollector, write_edge_fields, write_envelopes, write_fit
from ..geometry import write_pattern
from ..runtime.context import context
from ..utils.logging_mixin import LoggingMixin
from ..utils.textio import read_text_table
from ..utils.verify_helpers import any_match, should_ignore


class OutputKeywords(LoggingMixin):
    @keyword("WriteOutputs")
    def write_outputs(self, directory: str = None):
        """Schreibt alles, was die Sitzung haelt, samt ``manifest.csv``.

        Ohne ``directory`` wird ``output_dir`` der Konfiguration verwendet.
        Inhalt: Plotmuster, Ketten und Zusammenfassung, Envelopes, Randfelder.
        """
        cfg = context.get_config()
        collector = OutputCollector(directory or cfg.output_dir, cfg.echo())
        for plot in context.get_plots():
            meta = collector.meta(plot=plot.id)
            collector.add("parents", write_pattern(plot.parents, collector.path("plots", f"{plot.id}_parents.csv"),
                                                   meta), plot.id)
            if plot.children is not None:
                collector.add("children", write_pattern(plot.children,
                                                        collector.path("plots", f"{plot.id}_children.csv"), meta),
                              plot.id)
        if context.has_chains():
            write_fit(context.get_chains(), collector)
        envelopes = context.get_envelopes()
        if envelopes:
            write_envelopes(envelopes, collector)
        for plot_id, fields in context.get_all_edge_fields().items():
            write_edge_fields(plot_id, fields, collector)
        manifest = collector.write_manifest()
        self.log_info(f"{len(collector.entries)} Datei(en) nach {collector.root} geschrieben")
        return str(manifest)

    @keyword("VerifyOutputWritten")
    def verify_output_written(self, directory: str, pattern: str, mode: str = "WCM"):
        """Prueft, dass ``manifest.csv`` in ``directory`` eine passende Datei nennt.

        ``mode``: ``WCM`` (Wildcards ``*``, ``?``, Standard), ``REGX`` oder ``EXACT``.

        Beispiel:
        | VerifyOutputWritten    ${OUT}    envelope/*_L.csv
        """
        if should_ignore(pattern):
            self.log_info(f"'{pattern}' ignored ($IGNORE)")
            return
        _, _, rows = read_text_table(Path(directory) / "manifest.csv")
        paths = [row[2] for row in rows]
        if not any_match(paths, pattern, mode):
            raise AssertionError(f"[VerifyOutputWritten] no file matching '{pattern}' in {', '.join(paths) or '-'}")
