from mesdaudit.cli import main

raise SystemExit(main())
